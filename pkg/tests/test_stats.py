import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import gammainc

from baas.stats import DegenerateMatrixError, chi2_quantile, mahalanobis_sq, symmetrize


def chi2_quantile_oracle(dof, p, tol=1e-12):
    """Bisection on the regularized lower incomplete gamma function."""
    lo, hi = 0.0, 1.0
    while gammainc(dof / 2, hi / 2) < p:
        hi *= 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gammainc(dof / 2, mid / 2) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestMahalanobis:
    def test_zero_residual(self):
        s = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 4.0]])
        assert mahalanobis_sq(np.zeros(3), s) == 0.0

    def test_identity_metric(self):
        assert mahalanobis_sq([1.0, 0.0, 0.0], np.eye(3)) == pytest.approx(1.0)

    def test_diagonal_metric(self):
        # hand evaluation: r' S^-1 r = 4/4 = 1
        assert mahalanobis_sq([2.0, 0.0, 0.0], np.diag([4.0, 1.0, 1.0])) == pytest.approx(1.0)

    def test_non_spd_rejected(self):
        with pytest.raises(DegenerateMatrixError):
            mahalanobis_sq([1.0, 0.0, 0.0], np.diag([1.0, -1.0, 1.0]))

    def test_asymmetric_rejected(self):
        s = np.eye(3)
        s = s.copy()
        s[0, 1] = 0.5
        with pytest.raises(DegenerateMatrixError):
            mahalanobis_sq([1.0, 0.0, 0.0], s)

    @given(st.integers(0, 2**32 - 1))
    def test_rotation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        r = rng.normal(size=3)
        a = rng.normal(size=(3, 3))
        s = a @ a.T + 3 * np.eye(3)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        d0 = mahalanobis_sq(r, s)
        d1 = mahalanobis_sq(q @ r, q @ s @ q.T)
        assert d1 == pytest.approx(d0, rel=1e-9, abs=1e-9)


class TestChi2Quantile:
    def test_known_values_against_oracle(self):
        assert chi2_quantile(3, 0.95) == pytest.approx(chi2_quantile_oracle(3, 0.95), abs=1e-8)
        assert chi2_quantile(3, 0.95) == pytest.approx(7.8147, abs=1e-4)
        assert chi2_quantile(2, 0.95) == pytest.approx(chi2_quantile_oracle(2, 0.95), abs=1e-8)
        assert chi2_quantile(2, 0.95) == pytest.approx(5.9915, abs=1e-4)

    def test_small_p_limit(self):
        assert chi2_quantile(3, 1e-12) < 1e-3

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            chi2_quantile(3, 0.0)
        with pytest.raises(ValueError):
            chi2_quantile(3, 1.0)
        with pytest.raises(ValueError):
            chi2_quantile(0, 0.5)

    @given(st.integers(0, 2**32 - 1))
    def test_strictly_increasing(self, seed):
        rng = np.random.default_rng(seed)
        p = sorted(rng.uniform(0.01, 0.99, size=3))
        dofs = sorted(rng.integers(1, 10, size=3))
        vals = [chi2_quantile(int(dofs[1]), float(pi)) for pi in p]
        assert vals == sorted(vals) and len(set(vals)) == len(vals) or p[0] == p[-1]
        by_dof = [chi2_quantile(int(d), float(p[1])) for d in dofs]
        assert all(a <= b for a, b in zip(by_dof, by_dof[1:]))


def test_symmetrize_tolerates_drift():
    m = np.eye(2)
    m[0, 1] = 1e-12
    out = symmetrize(m)
    assert out[0, 1] == out[1, 0]
