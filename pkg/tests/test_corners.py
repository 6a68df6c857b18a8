from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from crowdcount.corners import (
    CornerConfig, GradientField, StructureTensorField, corner_discriminant, detect_corners, eigenvalues,
    score_maps, sobel_gradients, structure_tensor, suppression_offsets, write_corners_csv,
)
from crowdcount.motion import Blob

from oracles import brute_force_corners, brute_force_discriminant, naive_correlate

SOBEL = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]])


def _whole(frame):
    return [Blob(0, 0, frame.shape[1], frame.shape[0], frame.size)]


def test_sobel_constant():
    g = sobel_gradients(np.full((5, 5), 9))
    assert not g.gx.any() and not g.gy.any()


def test_sobel_vertical_step():
    img = np.zeros((6, 8), dtype=np.uint8)
    img[:, 4:] = 100
    g = sobel_gradients(img)
    assert not g.gy.any()
    col = np.abs(g.gx).max(axis=0)
    assert set(np.flatnonzero(col == col.max())) == {3, 4}


def test_sobel_matches_naive():
    img = np.random.default_rng(0).integers(0, 256, (8, 8)).astype(np.uint8)
    g = sobel_gradients(img)
    np.testing.assert_array_equal(g.gx, naive_correlate(img, SOBEL))
    np.testing.assert_array_equal(g.gy, naive_correlate(img, SOBEL.T))
    np.testing.assert_allclose(g.magnitude, np.hypot(g.gx, g.gy))


def test_sobel_too_small():
    with pytest.raises(ValueError):
        sobel_gradients(np.zeros((2, 5)))


def test_tensor_of_zero_gradients():
    t = structure_tensor(GradientField(np.zeros((4, 4)), np.zeros((4, 4))))
    assert not (t.a.any() or t.b.any() or t.c.any())


def test_tensor_of_unit_x_gradient():
    t = structure_tensor(GradientField(np.ones((7, 7)), np.zeros((7, 7))))
    np.testing.assert_allclose(t.a, 1.0)
    assert not t.b.any() and not t.c.any()


def test_tensor_matches_windowed_sum():
    rng = np.random.default_rng(1)
    gx, gy = rng.normal(size=(2, 9, 9))
    t = structure_tensor(GradientField(gx, gy))
    w = np.array([[1, 4, 7, 4, 1], [4, 16, 26, 16, 4], [7, 26, 41, 26, 7], [4, 16, 26, 16, 4], [1, 4, 7, 4, 1]]) / 273
    y, x = 4, 5
    ref = 0.0
    for i in range(5):
        for j in range(5):
            yy = min(max(y + i - 2, 0), 8)
            xx = min(max(x + j - 2, 0), 8)
            ref += w[i, j] * gx[yy, xx] * gy[yy, xx]
    assert t.b[y, x] == pytest.approx(ref, abs=1e-12)
    assert np.all(t.a >= 0) and np.all(t.c >= 0)
    assert np.all(t.b ** 2 <= t.a * t.c + 1e-9)


def test_discriminant_isotropic_and_rank_one():
    one = np.ones((1, 1))
    zero = np.zeros((1, 1))
    assert corner_discriminant(StructureTensorField(3 * one, zero, 3 * one))[0, 0] == pytest.approx(1.0)
    assert corner_discriminant(StructureTensorField(2 * one, zero, zero))[0, 0] == 0.0
    assert corner_discriminant(StructureTensorField(zero, zero, zero))[0, 0] == 0.0


@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(-1, 1))
def test_eigenvalues_match_characteristic_polynomial(a, c, rho):
    b = rho * np.sqrt(a * c)
    t = StructureTensorField(np.array([[a]]), np.array([[b]]), np.array([[c]]))
    lmin, lmax = eigenvalues(t)
    tr, det = a + c, a * c - b * b
    disc = np.sqrt(max(tr * tr / 4 - det, 0.0))
    assert lmax[0, 0] == pytest.approx(tr / 2 + disc, abs=1e-9 * max(1.0, tr))
    assert lmin[0, 0] == pytest.approx(tr / 2 - disc, abs=1e-9 * max(1.0, tr))


def test_flat_frame_has_no_corners():
    f = np.full((20, 20), 128, dtype=np.uint8)
    assert detect_corners(f, _whole(f)) == []


def test_square_gives_four_corners():
    img = np.zeros((32, 32), dtype=np.uint8)
    img[10:22, 10:22] = 255
    got = detect_corners(img, _whole(img))
    score, mag = brute_force_discriminant(img)
    assert {(c.x, c.y) for c in got} == brute_force_corners(score, mag, CornerConfig())
    assert len(got) == 4
    xs = sorted(c.x for c in got)
    ys = sorted(c.y for c in got)
    # one corner near each vertex of the square
    assert xs[1] < 16 < xs[2] and ys[1] < 16 < ys[2]


def test_no_blobs_no_corners():
    img = np.zeros((32, 32), dtype=np.uint8)
    img[10:22, 10:22] = 255
    assert detect_corners(img, []) == []


@pytest.mark.parametrize("kw", [dict(th_d=0), dict(th_d=1), dict(th_g=-1), dict(mask_size=4), dict(mask_shape="hex")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        CornerConfig(**kw)


def test_suppression_offsets():
    assert len(suppression_offsets("square", 5)) == 25
    assert len(suppression_offsets("circular", 5)) == 13
    assert len(suppression_offsets("circular", 3)) == 5


blocky = st.builds(
    lambda seed: np.kron(np.random.default_rng(seed).integers(0, 256, (6, 6)), np.ones((4, 4))).astype(np.uint8),
    st.integers(0, 2**32 - 1),
)


@given(blocky, st.sampled_from(["square", "circular"]), st.sampled_from([3, 5, 7]))
def test_corner_invariants(img, shape, size):
    cfg = CornerConfig(mask_shape=shape, mask_size=size)
    blob = Blob(4, 2, 14, 18, 14 * 18)
    got = detect_corners(img, [blob], cfg)
    r = size // 2
    for c in got:
        assert blob.contains(c.x, c.y)
        assert 0 <= c.score <= 1
    for i, p in enumerate(got):
        for q in got[i + 1:]:
            dy, dx = p.y - q.y, p.x - q.x
            inside = (abs(dx) <= r and abs(dy) <= r) if shape == "square" else dx * dx + dy * dy <= r * r
            assert not inside


@given(blocky, st.floats(0.05, 0.5), st.floats(0, 0.4), st.floats(0, 50), st.floats(0, 50))
def test_raising_thresholds_never_adds_corners(img, th_d, extra_d, th_g, extra_g):
    score, mag = score_maps(img)
    cands = np.ones(img.shape, dtype=bool)
    from crowdcount.corners import strict_local_maxima

    def passing(d, g):
        return set(zip(*np.nonzero(cands & strict_local_maxima(score) & (score > d) & (mag > g))))

    assert passing(min(th_d + extra_d, 0.99), th_g + extra_g) <= passing(th_d, th_g)


@given(blocky, st.integers(2, 3))
def test_discriminant_is_scale_invariant(img, factor):
    small = (img // 4).astype(np.uint8)
    big = (small.astype(int) * factor).astype(np.uint8)
    d1, _ = score_maps(small)
    d2, _ = score_maps(big)
    np.testing.assert_allclose(d1, d2, atol=1e-9)


def test_corners_csv(tmp_path):
    from crowdcount.corners import CornerPoint

    write_corners_csv(tmp_path / "c.csv", [(3, CornerPoint(1, 2, 0.5, 2))])
    assert (tmp_path / "c.csv").read_text().splitlines() == ["frame,view,x,y,score", "3,2,1,2,0.500000"]
