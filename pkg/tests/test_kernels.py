import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ltvm import _kernels


def _instance(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-2, 2, 2)
    b = a + rng.uniform(0.3, 3.0) * np.array([np.cos(th := rng.uniform(-3, 3)), np.sin(th)])
    t = rng.uniform(-0.3, 1.3, n)
    pts = a + t[:, None] * (b - a) + rng.normal(0, 0.02, (n, 2))
    x = np.concatenate([a, b]) + rng.normal(0, 0.05, 4)
    c, _ = _kernels.centroid_scatter(pts)
    return np.ascontiguousarray(pts), x, c


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 80))
def test_analytic_jacobian_matches_central_differences(seed, n):
    pts, x, c = _instance(seed, n)
    _, jac = _kernels.residual_jacobian(pts, x, c[0], c[1])
    num = _kernels.numeric_jacobian(pts, x, c[0], c[1], 1e-7)
    # rows whose point sits within h of a kink are not differentiable there
    t = ((pts - x[:2]) @ (x[2:] - x[:2])) / np.sum((x[2:] - x[:2]) ** 2)
    smooth = np.concatenate([[True], (np.abs(t) > 1e-4) & (np.abs(t - 1) > 1e-4)])
    np.testing.assert_allclose(jac[smooth], num[smooth], atol=1e-5)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 200))
def test_moment_core_matches_full_sums(seed, n):
    pts, x, c = _instance(seed, n)
    mom, sums = np.empty(14), np.empty(5)
    explicit = _kernels._build_core(pts, x, c[0], c[1], mom)
    full = _kernels.segment_cost(pts, x, c[0], c[1])
    fast = _kernels._fast_cost(pts, explicit, mom, x, c[0], c[1], sums)
    assert abs(fast - full) <= 1e-9 * max(1.0, full)
    jtj, jtr = np.empty((4, 4)), np.empty(4)
    ref_jtj, ref_jtr = np.empty((4, 4)), np.empty(4)
    assert _kernels._fast_normal_equations(pts, explicit, mom, x, c[0], c[1], jtj, jtr, sums)
    _kernels._normal_equations(pts, x, c[0], c[1], ref_jtj, ref_jtr)
    np.testing.assert_allclose(jtj, ref_jtj, atol=1e-9 * max(1.0, np.abs(ref_jtj).max()))
    np.testing.assert_allclose(jtr, ref_jtr, atol=1e-9 * max(1.0, np.abs(ref_jtr).max()))


def test_moved_core_is_flagged_or_exact():
    pts, x, c = _instance(1, 100)
    mom, sums = np.empty(14), np.empty(5)
    explicit = _kernels._build_core(pts, x, c[0], c[1], mom)
    shifted = x + np.array([0.4, 0.0, -0.4, 0.0])
    fast = _kernels._fast_cost(pts, explicit, mom, shifted, c[0], c[1], sums)
    full = _kernels.segment_cost(pts, shifted, c[0], c[1])
    assert fast < 0.0 or abs(fast - full) < 1e-9
    assert _kernels._core_stale(mom, shifted, c[0], c[1]) or fast >= 0.0


def test_centroid_scatter_against_numpy():
    pts = np.random.default_rng(0).normal(3.0, 2.0, (50, 2))
    c, s = _kernels.centroid_scatter(pts)
    np.testing.assert_allclose(c, pts.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(s, (pts - c).T @ (pts - c), atol=1e-10)


def test_lm_fit_status_codes():
    pts, x, c = _instance(2, 40)
    out, cost, iters, status = _kernels.lm_fit(pts, x, c[0], c[1], 100, 1e-7, _kernels.LAM0)
    assert status in (0, 1) and iters <= 100
    assert cost <= _kernels.segment_cost(pts, x, c[0], c[1])
    _, _, iters, status = _kernels.lm_fit(pts, x, c[0], c[1], 1, 0.0, _kernels.LAM0)
    assert iters == 1 and status in (1, 2)
