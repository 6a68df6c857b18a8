"""81-dimensional raw-pixel samples and a small RBF kernel classifier trained by SMO."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

SAMPLE_SIZE = 9


def _resample_coords(size: int, out: int = SAMPLE_SIZE):
    # pixel-centre aligned bilinear sampling positions
    src = (np.arange(out) + 0.5) * size / out - 0.5
    src = np.clip(src, 0, size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, size - 1)
    return lo, hi, src - lo


def resample_windows(frame, ox, oy, size: int, out: int = SAMPLE_SIZE) -> np.ndarray:
    """Bilinear ``size x size`` -> ``out x out`` for windows at origins ``(ox, oy)``.

    Returns (n_windows, out, out) float arrays.
    """
    img = np.asarray(frame, dtype=np.float64)
    ox = np.atleast_1d(ox)[:, None, None]
    oy = np.atleast_1d(oy)[:, None, None]
    lo, hi, t = _resample_coords(size, out)
    ry0, ry1, ty = lo[None, :, None], hi[None, :, None], t[None, :, None]
    rx0, rx1, tx = lo[None, None, :], hi[None, None, :], t[None, None, :]
    top = img[oy + ry0, ox + rx0] * (1 - tx) + img[oy + ry0, ox + rx1] * tx
    bottom = img[oy + ry1, ox + rx0] * (1 - tx) + img[oy + ry1, ox + rx1] * tx
    return top * (1 - ty) + bottom * ty


def normalize_samples(patches: np.ndarray) -> np.ndarray:
    """Flatten rows and scale each sample to zero mean, unit variance (constant -> zeros)."""
    flat = patches.reshape(len(patches), -1)
    centered = flat - flat.mean(axis=1, keepdims=True)
    std = centered.std(axis=1, keepdims=True)
    out = np.zeros_like(centered)
    ok = std[:, 0] > 1e-9
    out[ok] = centered[ok] / std[ok]
    return out


def extract_raw_features(frame, window) -> np.ndarray:
    """81-vector for ``window = (x, y, size)`` (top-left corner and side)."""
    x, y, size = window
    frame = np.asarray(frame)
    if x < 0 or y < 0 or x + size > frame.shape[1] or y + size > frame.shape[0]:
        raise ValueError("window lies outside the frame")
    return normalize_samples(resample_windows(frame, x, y, size))[0]


def samples_from_windows(windows) -> np.ndarray:
    """Raw-pixel samples for a stack of equally sized square windows."""
    windows = np.asarray(windows, dtype=np.float64)
    n, size, _ = windows.shape
    out = np.empty((n, SAMPLE_SIZE, SAMPLE_SIZE))
    for i, w in enumerate(windows):
        out[i] = resample_windows(w, 0, 0, size)[0]
    return normalize_samples(out)


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class KernelClassifier:
    support: np.ndarray
    coef: np.ndarray  # alpha_i * y_i
    rho: float
    gamma: float
    converged: bool = True

    def decision_function(self, samples) -> np.ndarray:
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        if len(self.support) == 0:
            return np.full(len(samples), -self.rho)
        return rbf_kernel(samples, self.support, self.gamma) @ self.coef - self.rho

    def decide(self, sample) -> int:
        return 1 if self.decision_function(sample)[0] > 0 else -1

    def predict(self, samples) -> np.ndarray:
        return np.where(self.decision_function(samples) > 0, 1, -1)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, support=self.support, coef=self.coef, rho=self.rho, gamma=self.gamma,
                     converged=self.converged)

    @classmethod
    def load(cls, path) -> "KernelClassifier":
        with np.load(path) as z:
            return cls(z["support"], z["coef"], float(z["rho"]), float(z["gamma"]), bool(z["converged"]))


def _smo(kernel: np.ndarray, y: np.ndarray, c: float, tol: float, max_iter: int):
    """Dual coordinate descent with maximal-violating-pair working sets."""
    n = len(y)
    q = kernel * y[:, None] * y[None, :]
    qd = np.diag(q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    tau = 1e-12
    converged = False
    for _ in range(max_iter):
        yg = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, yg, -np.inf)))
        j = int(np.argmin(np.where(low, yg, np.inf)))
        if yg[i] - yg[j] < tol:
            converged = True
            break
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(qd[i] + qd[j] + 2 * q[i, j], tau)
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > c:
                    ni, nj = c, c - diff
            elif nj > c:
                nj, ni = c, c + diff
        else:
            quad = max(qd[i] + qd[j] - 2 * q[i, j], tau)
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > c:
                if ni > c:
                    ni, nj = c, total - c
            elif nj < 0:
                nj, ni = 0.0, total
            if total > c:
                if nj > c:
                    nj, ni = c, total - c
            elif ni < 0:
                ni, nj = 0.0, total
        grad += q[:, i] * (ni - ai) + q[:, j] * (nj - aj)
        alpha[i], alpha[j] = ni, nj

    yg = y * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        rho = float(yg[free].mean())
    else:
        ub, lb = np.inf, -np.inf
        for t in range(n):
            at_upper, at_lower = alpha[t] >= c, alpha[t] <= 0
            if (y[t] > 0 and at_upper) or (y[t] < 0 and at_lower):
                lb = max(lb, yg[t])
            elif (y[t] > 0 and at_lower) or (y[t] < 0 and at_upper):
                ub = min(ub, yg[t])
        rho = 0.5 * (ub + lb) if np.isfinite(ub) and np.isfinite(lb) else float(yg.mean())
    return alpha, rho, converged


def train_reference_classifier(samples, labels, kernel_width: float = 3.0, penalty: float = 10.0,
                               tol: float = 1e-3, max_iter: int = 100_000) -> KernelClassifier:
    """RBF classifier with ``gamma = 1 / (2 * kernel_width**2)``; labels in {0,1} or {-1,+1}."""
    x = np.asarray(samples, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    y = np.where(y > 0, 1.0, -1.0)
    if not ((y > 0).any() and (y < 0).any()):
        raise ValueError("both classes must be present")
    gamma = 1.0 / (2.0 * kernel_width ** 2)
    alpha, rho, converged = _smo(rbf_kernel(x, x, gamma), y, penalty, tol, max_iter)
    if not converged:
        logger.warning("SMO stopped at the iteration cap (%d) before reaching tolerance %g", max_iter, tol)
    sv = alpha > 1e-12
    return KernelClassifier(x[sv], alpha[sv] * y[sv], rho, gamma, converged)
