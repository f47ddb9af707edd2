import math

import numpy as np
import pytest

from momentot.moments import (ClosedForm, Empirical, TruncatedMomentSequence,
                              DegreeOverflowError, descriptor_moments, riesz)
from momentot.polyalg import AffineMap, Polynomial, parse_polynomial
from momentot import postprocess as P


def uniform_sym(order):
    return descriptor_moments(ClosedForm([("uniform", -1.0, 1.0)]), None, order)


# -- christoffel model ----------------------------------------------------------

def test_model_uniform_sym_r1():
    m = P.christoffel_model(uniform_sym(2), 1)
    assert m.rank == 2
    assert np.allclose(sorted(m.eigenvalues), [1 / 3, 1.0])


def test_model_dirac_rank_one():
    y = descriptor_moments(ClosedForm([("dirac", 0.4)]), None, 2)
    m = P.christoffel_model(y, 1)
    assert m.rank == 1


def test_model_segment_rank():
    # measure on the segment x2 = 0 in 2-D: the x2 column is null at r=1
    y = descriptor_moments(
        Empirical(np.array([[0.2, 0.0], [0.5, 0.0], [0.8, 0.0]])), None, 2)
    m = P.christoffel_model(y, 1)
    assert m.rank == 2


def test_model_rejects_order_overflow():
    with pytest.raises(DegreeOverflowError):
        P.christoffel_model(uniform_sym(2), 2)


def test_model_rejects_nonfinite():
    y = TruncatedMomentSequence(1, 2, np.array([1.0, np.nan, 0.3]))
    with pytest.raises(ValueError):
        P.christoffel_model(y, 1)


# -- kernel diagonal -------------------------------------------------------------

def test_kernel_closed_form_uniform():
    m = P.christoffel_model(uniform_sym(2), 1)
    # kappa(x) = 1 + 3 x^2
    assert P.kernel_diag(m, [0.0]) == pytest.approx(1.0, abs=1e-10)
    assert P.kernel_diag(m, [1.0]) == pytest.approx(4.0, abs=1e-10)
    assert P.kernel_diag(m, [2.0]) == pytest.approx(13.0, abs=1e-10)
    assert P.christoffel_value(m, [1.0]) == pytest.approx(0.25, abs=1e-10)


def test_kernel_reproduces_at_atom():
    y = descriptor_moments(ClosedForm([("dirac", 0.3)]), None, 4)
    m = P.christoffel_model(y, 2)
    assert P.kernel_diag(m, [0.3]) == pytest.approx(1.0, abs=1e-8)


def test_kernel_nonnegative_everywhere():
    rng = np.random.default_rng(6)
    y = descriptor_moments(Empirical(rng.uniform(-1, 1, (30, 2))), None, 6)
    m = P.christoffel_model(y, 3)
    vals = P.kernel_diag_grid(m, rng.uniform(-2, 2, (100, 2)))
    assert np.all(vals >= 0)


def test_reproducing_identity_in_retained_span():
    rng = np.random.default_rng(8)
    y = descriptor_moments(Empirical(rng.uniform(-1, 1, (40, 2))), None, 6)
    m = P.christoffel_model(y, 3)
    V = m.eigenvectors[:, :m.rank]
    for _ in range(10):
        coef = V @ rng.normal(size=m.rank)
        q = Polynomial(2, {a: c for a, c in zip(m.basis, coef)})
        lhs = riesz(y, q * q)
        lam = m.eigenvalues[:m.rank]
        proj = V.T @ coef
        rhs = float(np.sum(lam * proj ** 2))
        assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(rhs))


def test_kernel_with_transform_matches_scaled_model():
    # model in scaled coordinates + transform == evaluating at scaled points
    amap = AffineMap((2.0,), (1.0,))
    rng = np.random.default_rng(9)
    pts_nat = rng.uniform(-1, 3, (30, 1))
    y_scaled = descriptor_moments(Empirical(amap.to_scaled(pts_nat)), None, 4)
    m = P.christoffel_model(y_scaled, 2, transform=amap)
    m0 = P.christoffel_model(y_scaled, 2)
    probe_nat = rng.uniform(-1, 3, (7, 1))
    a = P.kernel_diag_grid(m, probe_nat)
    b = P.kernel_diag_grid(m0, amap.to_scaled(probe_nat))
    assert np.allclose(a, b)


# -- support estimation ------------------------------------------------------------

def test_support_threshold_example():
    m = P.christoffel_model(uniform_sym(2), 1)
    est = P.support_estimate(m, np.array([[0.0], [1.0], [2.0]]), 0.5)
    assert list(est.labels) == [True, True, False]
    assert est.gamma_r == pytest.approx(0.5 / 2)


def test_support_monotone_in_eta():
    # the estimate shrinks as eta grows; near eta = 1 the kappa threshold
    # approaches s(r) itself
    m = P.christoffel_model(uniform_sym(2), 1)
    pts = np.linspace(-2, 2, 81).reshape(-1, 1)
    prev = None
    for eta in (0.1, 0.5, 0.9, 0.999):
        est = P.support_estimate(m, pts, eta)
        if prev is not None:
            assert np.all(prev | ~est.labels)     # est subset of prev
        prev = est.labels
    est = P.support_estimate(m, pts, 0.999)
    inside = np.abs(pts[est.labels, 0])
    want = math.sqrt((2 / 0.999 - 1) / 3)        # kappa = 1 + 3x^2 <= s/eta
    assert inside.max() <= want + 0.05
    assert inside.max() >= want - 0.05


def test_support_validation():
    m = P.christoffel_model(uniform_sym(2), 1)
    with pytest.raises(ValueError):
        P.support_estimate(m, np.zeros((0, 1)), 0.3)
    with pytest.raises(ValueError):
        P.support_estimate(m, np.array([[0.0]]), 1.5)


def test_markov_mass_bound_on_empirical():
    rng = np.random.default_rng(10)
    pts = 0.5 + 0.3 * rng.normal(size=(300, 2)).clip(-1.5, 1.5)
    y = descriptor_moments(Empirical(pts), None, 8)
    for eta in (0.1, 0.3, 0.5):
        for r in (1, 2, 3, 4):
            m = P.christoffel_model(y, r)
            est = P.support_estimate(m, pts, eta)
            assert est.inside_fraction() >= 1 - eta - 0.02


def test_monotone_discrimination_outside_grows_with_r():
    y = descriptor_moments(ClosedForm([("uniform", -1.0, 1.0),
                                       ("uniform", -1.0, 1.0)]), None, 8)
    center = [0.0, 0.0]
    outside = [1.5, 0.0]           # half a box width beyond the box
    ratios = []
    for r in (1, 2, 3, 4):
        m = P.christoffel_model(y, r)
        kc = P.kernel_diag(m, center)
        ko = P.kernel_diag(m, outside)
        assert ko > kc
        ratios.append(ko / kc)
    assert all(b > a for a, b in zip(ratios, ratios[1:]))


def test_make_grid_shape():
    pts, shape = P.make_grid([0, 0], [1, 2], (4, 8))
    assert pts.shape == (32, 2)
    assert shape == (4, 8)
    assert pts[:, 1].max() < 2.0


# -- quantities of interest ----------------------------------------------------------

def test_qoi_exact_paths():
    y = descriptor_moments(ClosedForm([("uniform", 0.0, 1.0)]), None, 4)
    assert P.qoi_estimate(y, Polynomial.constant(1, 1.0)) == 1.0
    assert P.qoi_estimate(y, parse_polynomial("x1^2", 1)) == pytest.approx(1 / 3)


def test_qoi_with_transform():
    amap = AffineMap((0.5,), (0.5,))      # natural = 0.5 u + 0.5
    y_nat = descriptor_moments(ClosedForm([("uniform", 0.0, 1.0)]), None, 4)
    y_scaled = y_nat.pushforward_affine([2.0], [-1.0])
    g = parse_polynomial("x1^2", 1)
    assert P.qoi_estimate(y_scaled, g, transform=amap) == pytest.approx(1 / 3)


def test_qoi_approx_abs_value():
    y = uniform_sym(8)
    xs = np.linspace(-1, 1, 201).reshape(-1, 1)
    aq = P.qoi_estimate_approx(y, xs, np.abs(xs).ravel(), 6)
    assert abs(aq.value - 0.5) <= aq.fit_sup_error
    assert aq.fit_sup_error < 0.1


def test_qoi_approx_degree_overflow():
    y = uniform_sym(4)
    xs = np.linspace(-1, 1, 10).reshape(-1, 1)
    with pytest.raises(DegreeOverflowError):
        P.qoi_estimate_approx(y, xs, np.abs(xs).ravel(), 6)


# -- density fitting -------------------------------------------------------------------

def test_density_fit_linear_density():
    mu = TruncatedMomentSequence.from_dict(1, 4, {(k,): 2.0 / (k + 2)
                                                  for k in range(5)})
    nu = descriptor_moments(ClosedForm([("uniform", 0.0, 1.0)]), None, 8)
    fit = P.density_fit(mu, nu, 1)
    assert fit.polynomial.coefficient((1,)) == pytest.approx(2.0, abs=1e-8)
    assert fit.polynomial.coefficient((0,)) == pytest.approx(0.0, abs=1e-8)


def test_density_fit_identity():
    nu = descriptor_moments(ClosedForm([("uniform", 0.0, 1.0),
                                        ("uniform", 0.0, 1.0)]), None, 8)
    fit = P.density_fit(nu.restrict(4), nu, 2)
    assert fit.polynomial.coefficient((0, 0)) == pytest.approx(1.0, abs=1e-8)
    for alpha in ((1, 0), (0, 1), (2, 0), (1, 1), (0, 2)):
        assert fit.polynomial.coefficient(alpha) == pytest.approx(0.0, abs=1e-8)


def test_density_fit_weight_scale_invariance():
    mu = TruncatedMomentSequence.from_dict(1, 4, {(k,): 2.0 / (k + 2)
                                                  for k in range(5)})
    nu = descriptor_moments(ClosedForm([("uniform", 0.0, 1.0)]), None, 8)
    rows = 5
    f1 = P.density_fit(mu, nu, 1, weights=np.ones(rows))
    f2 = P.density_fit(mu, nu, 1, weights=2.0 * np.ones(rows))
    assert f1.polynomial.terms == pytest.approx(f2.polynomial.terms)


def test_density_fit_residual_nonincreasing_in_degree():
    # density sqrt-like, not polynomial: residual falls as p grows
    import scipy.integrate
    mom = []
    for k in range(13):
        val, _ = scipy.integrate.quad(lambda x: x ** k * 1.5 * math.sqrt(x),
                                      0, 1)
        mom.append(val)
    mu = TruncatedMomentSequence.from_dict(1, 6, {(k,): mom[k] for k in range(7)})
    nu = descriptor_moments(ClosedForm([("uniform", 0.0, 1.0)]), None, 12)
    resids = [P.density_fit(mu, nu, p).residual for p in (0, 1, 2, 3)]
    assert all(b <= a + 1e-15 for a, b in zip(resids, resids[1:]))


def test_density_fit_order_validation():
    mu = uniform_sym(4)
    nu = uniform_sym(4)
    with pytest.raises(ValueError):
        P.density_fit(mu, nu, 3)      # rows up to order 1 < 4 columns
