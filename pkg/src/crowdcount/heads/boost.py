"""Discrete AdaBoost over decision stumps on Haar responses, and the attentional cascade."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .haar import FeatureBank, HaarFeature, enumerate_features, window_responses
from .integral import IntegralImage

logger = logging.getLogger(__name__)

MIN_ERROR = 1e-10


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeakLearner:
    """Votes 1 when ``polarity * response < polarity * threshold``."""
    feature: HaarFeature
    threshold: float
    polarity: int
    alpha: float
    error: float = 0.0

    def predict(self, responses: np.ndarray) -> np.ndarray:
        return (self.polarity * responses < self.polarity * self.threshold).astype(np.float64)


@dataclass
class CascadeStage:
    learners: list[WeakLearner]
    threshold: float
    detection_rate: float = 1.0
    false_alarm: float = 1.0

    def scores(self, responses: np.ndarray) -> np.ndarray:
        """``responses`` is (n_learners, n_windows)."""
        total = np.zeros(responses.shape[1])
        for learner, r in zip(self.learners, responses):
            total += learner.alpha * learner.predict(r)
        return total

    def accepts(self, responses: np.ndarray) -> np.ndarray:
        return self.scores(responses) >= self.threshold - 1e-12


@dataclass
class Cascade:
    stages: list[CascadeStage] = field(default_factory=list)
    base_size: int = 9

    def save(self, path) -> None:
        lines = ["# haar cascade", f"base_size {self.base_size}"]
        for st in self.stages:
            lines.append(f"stage detection_rate={st.detection_rate:.6f} false_alarm={st.false_alarm:.6f}")
            for wl in st.learners:
                f = wl.feature
                lines.append(
                    f"learner {f.proto} {f.x} {f.y} {f.w} {f.h} "
                    f"{wl.threshold!r} {wl.polarity} {wl.alpha!r}"
                )
            lines.append(f"stage_threshold {st.threshold!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Cascade":
        cascade = cls()
        learners: list[WeakLearner] = []
        stats = {}
        for raw in Path(path).read_text().splitlines():
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "base_size":
                cascade.base_size = int(parts[1])
            elif parts[0] == "stage":
                learners = []
                stats = dict(p.split("=") for p in parts[1:])
            elif parts[0] == "learner":
                proto, x, y, w, h = map(int, parts[1:6])
                learners.append(WeakLearner(HaarFeature(proto, x, y, w, h), float(parts[6]),
                                            int(parts[7]), float(parts[8])))
            elif parts[0] == "stage_threshold":
                cascade.stages.append(CascadeStage(
                    learners, float(parts[1]),
                    float(stats.get("detection_rate", 1.0)), float(stats.get("false_alarm", 1.0)),
                ))
            else:
                raise ValueError(f"unrecognised cascade line: {raw!r}")
        return cascade


def best_stumps(responses: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Optimal stump for every feature column.

    ``responses`` is (n_samples, n_features), ``labels`` in {0, 1}.  Returns
    per-feature ``(error, threshold, polarity)`` arrays.
    """
    n, m = responses.shape
    order = np.argsort(responses, axis=0, kind="stable")
    vals = np.take_along_axis(responses, order, axis=0)
    w = weights[order]
    pos = np.where(labels[order] == 1, w, 0.0)
    neg = w - pos
    t_pos, t_neg = pos[:, 0].sum(), neg[:, 0].sum()
    # prefix sums including the empty prefix
    s_pos = np.vstack([np.zeros((1, m)), np.cumsum(pos, axis=0)])
    s_neg = np.vstack([np.zeros((1, m)), np.cumsum(neg, axis=0)])
    # polarity +1: values left of the split vote positive
    err_plus = s_neg + (t_pos - s_pos)
    err_minus = s_pos + (t_neg - s_neg)
    # a split after row i is only valid where the sorted value changes
    valid = np.ones((n + 1, m), dtype=bool)
    valid[1:n] = vals[1:] > vals[:-1]
    err_plus = np.where(valid, err_plus, np.inf)
    err_minus = np.where(valid, err_minus, np.inf)
    i_plus = np.argmin(err_plus, axis=0)
    i_minus = np.argmin(err_minus, axis=0)
    e_plus = err_plus[i_plus, np.arange(m)]
    e_minus = err_minus[i_minus, np.arange(m)]
    use_plus = e_plus <= e_minus
    split = np.where(use_plus, i_plus, i_minus)
    padded = np.vstack([vals[:1] - 1.0, vals, vals[-1:] + 1.0])
    thr = 0.5 * (padded[split, np.arange(m)] + padded[split + 1, np.arange(m)])
    return np.where(use_plus, e_plus, e_minus), thr, np.where(use_plus, 1, -1)


def boost_round(responses, labels, weights, features):
    """Pick the best stump under ``weights``; returns the learner and its votes."""
    weights = weights / weights.sum()
    err, thr, pol = best_stumps(responses, labels, weights)
    j = int(np.argmin(err))
    e = float(err[j])
    if e >= 0.5 - 1e-12:
        raise TrainingError(f"no weak learner beats chance (best weighted error {e:.4f})")
    alpha = 0.5 * math.log((1.0 - max(e, MIN_ERROR)) / max(e, MIN_ERROR))
    learner = WeakLearner(features[j], float(thr[j]), int(pol[j]), alpha, e)
    return learner, learner.predict(responses[:, j]), j


def adaboost(responses, labels, features, rounds: int = 50, stop_when_perfect: bool = True):
    """Plain discrete AdaBoost.

    Returns the learners, their feature columns and the training error of the
    strong classifier after each round.
    """
    labels = np.asarray(labels, dtype=int)
    n_pos, n_neg = int(labels.sum()), int((1 - labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("both classes must be present")
    weights = np.where(labels == 1, 0.5 / n_pos, 0.5 / n_neg)
    signed = 2 * labels - 1
    learners, columns, history = [], [], []
    score = np.zeros(len(labels))
    for _ in range(rounds):
        learner, votes, j = boost_round(responses, labels, weights, features)
        learners.append(learner)
        columns.append(j)
        score += learner.alpha * votes
        total_alpha = sum(l.alpha for l in learners)
        predicted = score >= 0.5 * total_alpha
        history.append(float(np.mean(predicted != (labels == 1))))
        weights = weights * np.exp(-learner.alpha * signed * (2 * votes - 1))
        if stop_when_perfect and history[-1] == 0.0:
            break
    return learners, columns, history


def train_stage(pos_resp, neg_resp, features, target_fa: float, min_detection: float,
                max_learners: int) -> CascadeStage:
    responses = np.vstack([pos_resp, neg_resp])
    labels = np.concatenate([np.ones(len(pos_resp), dtype=int), np.zeros(len(neg_resp), dtype=int)])
    weights = np.where(labels == 1, 0.5 / len(pos_resp), 0.5 / len(neg_resp))
    signed = 2 * labels - 1
    learners = []
    score = np.zeros(len(labels))
    stage = None
    for _ in range(max_learners):
        learner, votes, _ = boost_round(responses, labels, weights, features)
        weights = weights * np.exp(-learner.alpha * signed * (2 * votes - 1))
        learners.append(learner)
        score += learner.alpha * votes
        pos_scores = np.sort(score[labels == 1])
        # lower the threshold until enough positives pass
        allowed_misses = int(math.floor((1.0 - min_detection) * len(pos_scores)))
        threshold = min(0.5 * sum(l.alpha for l in learners), float(pos_scores[allowed_misses]))
        passed = score >= threshold - 1e-12
        dr = float(passed[labels == 1].mean())
        fa = float(passed[labels == 0].mean())
        stage = CascadeStage(list(learners), threshold, dr, fa)
        if fa <= target_fa:
            break
    if stage.false_alarm > target_fa:
        logger.warning("stage stopped at %d learners with false alarm %.3f > target %.3f",
                       len(learners), stage.false_alarm, target_fa)
    return stage


def _harvest_negatives(cascade: Cascade, images, count: int, size: int, rng) -> np.ndarray:
    """Random ``size`` crops from negative images that the current cascade still accepts."""
    found = []
    attempts = 0
    images = [np.asarray(im) for im in images if im.shape[0] >= size and im.shape[1] >= size]
    if not images:
        return np.zeros((0, size, size), dtype=np.uint8)
    while len(found) < count and attempts < 50 * count:
        batch = []
        for _ in range(min(4 * count, 2000)):
            im = images[rng.integers(len(images))]
            y = rng.integers(im.shape[0] - size + 1)
            x = rng.integers(im.shape[1] - size + 1)
            batch.append(im[y:y + size, x:x + size])
        attempts += len(batch)
        batch = np.stack(batch)
        keep = classify_windows(cascade, batch)
        found.extend(batch[keep])
    return np.stack(found[:count]) if found else np.zeros((0, size, size), dtype=np.uint8)


def train_adaboost(positives, negatives, target_fa: float = 0.4, max_stages: int = 10,
                   min_detection: float = 0.995, max_learners: int = 100, stride: int = 1,
                   negative_images=(), seed: int = 42, features=None) -> Cascade:
    """Train a cascade on ``size x size`` positive and negative windows.

    Each stage boosts stumps until its false-alarm rate on the current
    negatives is at most ``target_fa`` while keeping ``min_detection`` of the
    positives.  Negatives rejected by a stage are dropped; the pool is
    topped up with crops from ``negative_images`` that still pass.
    """
    positives = np.asarray(positives)
    negatives = np.asarray(negatives)
    if len(positives) == 0 or len(negatives) == 0:
        raise TrainingError("both positive and negative windows are required")
    size = positives.shape[1]
    if positives.shape[1:] != (size, size) or negatives.shape[1:] != (size, size):
        raise TrainingError("all training windows must be square and share one size")
    rng = np.random.default_rng(seed)
    features = features or enumerate_features(size, stride)
    pos_resp = window_responses(positives, features, size)
    pool = negatives
    pool_target = len(negatives)
    cascade = Cascade(base_size=size)
    for s in range(max_stages):
        if len(pool) < pool_target and negative_images:
            extra = _harvest_negatives(cascade, negative_images, pool_target - len(pool), size, rng)
            pool = np.concatenate([pool, extra]) if len(extra) else pool
        if len(pool) == 0:
            logger.info("negatives exhausted after %d stages", s)
            break
        neg_resp = window_responses(pool, features, size)
        stage = train_stage(pos_resp, neg_resp, features, target_fa, min_detection, max_learners)
        cascade.stages.append(stage)
        logger.info("stage %d: %d learners, detection %.3f, false alarm %.3f",
                    s, len(stage.learners), stage.detection_rate, stage.false_alarm)
        pool = pool[classify_windows(Cascade([stage], size), pool)]
    return cascade


def classify_windows(cascade: Cascade, windows) -> np.ndarray:
    """Accept mask for a stack of ``base_size`` windows."""
    windows = np.asarray(windows)
    alive = np.ones(len(windows), dtype=bool)
    if not cascade.stages or len(windows) == 0:
        return alive
    tables = np.stack([IntegralImage(w).flat for w in windows]).astype(np.float64)
    size = cascade.base_size
    for st in cascade.stages:
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        bank = FeatureBank([l.feature for l in st.learners], size, size)
        resp = bank.matrix() @ tables[idx].T
        alive[idx] = st.accepts(resp)
    return alive


def classify_window_cascade(cascade: Cascade, ii: IntegralImage, origin=(0, 0), size: int | None = None) -> bool:
    """Evaluate one window with early rejection."""
    size = size or cascade.base_size
    ox, oy = origin
    scale = size / cascade.base_size
    for st in cascade.stages:
        bank = FeatureBank([l.feature for l in st.learners], ii.width, ii.height, scale, size)
        if not st.accepts(bank.responses(ii, ox, oy))[0]:
            return False
    return True


class CascadeScanner:
    """Caches per-scale feature banks for scanning frames of one size."""

    def __init__(self, cascade: Cascade):
        self.cascade = cascade
        self._banks = {}

    def _bank(self, stage_idx, width, height, size):
        key = (stage_idx, width, height, size)
        if key not in self._banks:
            st = self.cascade.stages[stage_idx]
            self._banks[key] = FeatureBank([l.feature for l in st.learners], width, height,
                                           size / self.cascade.base_size, size)
        return self._banks[key]

    def scores(self, ii: IntegralImage, ox, oy, size: int) -> np.ndarray:
        """Confidence per window; 0 for rejected windows, else 1 + final stage margin."""
        ox = np.asarray(ox)
        oy = np.asarray(oy)
        conf = np.zeros(len(ox))
        alive = np.ones(len(ox), dtype=bool)
        margin = np.zeros(len(ox))
        for s, st in enumerate(self.cascade.stages):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                return conf
            resp = self._bank(s, ii.width, ii.height, size).responses(ii, ox[idx], oy[idx])
            sc = st.scores(resp)
            ok = sc >= st.threshold - 1e-12
            alive[idx[~ok]] = False
            margin[idx] = sc - st.threshold
        conf[alive] = 1.0 + np.maximum(margin[alive], 0.0)
        return conf
