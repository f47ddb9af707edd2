import numpy as np
import pytest

from momentot import formulations as F
from momentot import relaxation as R
from momentot.moments import (ClosedForm, Empirical, descriptor_moments,
                              localizing_matrix)
from momentot.polyalg import SemialgebraicSet, parse_polynomial


def dirac(point, set_, order=8):
    return descriptor_moments(
        ClosedForm([("dirac", float(v)) for v in np.atleast_1d(point)]),
        set_, order)


def toy_gmp(set_, order=6):
    """One variable, constant-1 objective; used for structural checks."""
    mu = descriptor_moments(ClosedForm([("uniform", -1.0, 1.0)]), set_, order)
    return F.GeneralizedMomentProblem(
        variables=(F.MeasureVariable("m", set_),),
        objective=F.LinearMomentFunctional((("m", (2,), 1.0),)),
        constraints=(),
        masses={"m": ("eq", 1.0)},
        metadata={"built_order": order, "kind": "toy"},
    )


def test_min_order_computation(unit_box_1d):
    mu = descriptor_moments(ClosedForm([("uniform", 0.0, 1.0)]), unit_box_1d, 8)
    gmp2 = F.build_wp_even(2, mu, mu, unit_box_1d)
    assert R.min_order(gmp2) == 1
    gmp4 = F.build_wp_even(4, mu, mu, unit_box_1d)
    assert R.min_order(gmp4) == 2
    with pytest.raises(ValueError):
        R.RelaxationOrder(1, 2)


def test_assemble_block_structure_ball_only():
    ball = SemialgebraicSet.unit_ball(1)
    gmp = toy_gmp(ball)
    prog = R.assemble(gmp, 1)
    # decision: 3 scalars + packed M_1 (2x2 -> 3) + packed ball block (1x1)
    assert [(b.kind, b.size) for b in prog.blocks] == \
        [("free", 3), ("psd", 2), ("psd", 1)]
    assert prog.n == 3 + 3 + 1
    # rows: 4 definitional + 1 mass
    assert prog.m == 5


def test_assemble_deterministic(mask_pair, unit_box_2d):
    _, _, mu, nu = mask_pair
    gmp = F.build_wp_even(2, mu, nu, unit_box_2d)
    p1 = R.assemble(gmp, 2)
    p2 = R.assemble(gmp, 2)
    assert p1.serialize() == p2.serialize()


def test_assemble_rejects_low_order_and_quadratic(unit_box_1d):
    mu = dirac(0.5, unit_box_1d)
    gmp = F.build_wp_even(4, mu, mu, unit_box_1d)
    with pytest.raises(ValueError):
        R.assemble(gmp, 1)          # r* = 2
    ball = SemialgebraicSet.ball([0.5], 0.5)
    gw = F.build_gw_even(2, None, None, dirac(0.4, ball), dirac(0.4, ball),
                         ball, ball, q=2)
    with pytest.raises(ValueError):
        R.assemble(gw, 2)


def test_assemble_rejects_orders_beyond_built_marginals(unit_box_1d):
    mu = dirac(0.5, unit_box_1d, order=4)
    gmp = F.build_wp_even(2, mu, mu, unit_box_1d)
    with pytest.raises(ValueError):
        R.assemble(gmp, 3)


def test_wp_odd_block_counting(unit_box_1d):
    mu = dirac(0.2, unit_box_1d, 8)
    gmp = F.build_wp_odd(1, mu, dirac(0.8, unit_box_1d, 8), unit_box_1d)
    prog = R.assemble(gmp, 2)
    psd = [b for b in prog.blocks if b.kind == "psd"]
    # 2 variables x (g0, ball, 2 box quads, sign) = 10 blocks
    assert len(psd) == 10
    nn = [b for b in prog.blocks if b.kind == "nonneg"]
    assert len(nn) == 1 and nn[0].size == 2


def test_schmudgen_adds_product_blocks():
    ball = SemialgebraicSet.unit_ball(1)
    set_ = ball.with_inequalities([parse_polynomial("x1", 1)])
    gmp = toy_gmp(set_)
    plain = R.assemble(gmp, 2)
    schm = R.assemble(gmp, 2, schmudgen=True)
    n_plain = sum(1 for b in plain.blocks if b.kind == "psd")
    n_schm = sum(1 for b in schm.blocks if b.kind == "psd")
    assert n_schm == n_plain + 1     # the ball * x1 product


def test_solve_identical_marginals_zero(unit_box_2d):
    mu = descriptor_moments(ClosedForm([("uniform", 0, 1), ("uniform", 0, 1)]),
                            unit_box_2d, 4)
    gmp = F.build_wp_even(2, mu, mu, unit_box_2d)
    res = R.solve_order(gmp, 1)
    assert abs(res.rho) <= 1e-7
    assert res.status == "optimal"


def test_solve_quantile_oracle(unit_box_1d):
    mu = descriptor_moments(ClosedForm([("uniform", 0.0, 1.0)]), unit_box_1d, 6)
    nu = descriptor_moments(ClosedForm([("uniform", 0.25, 0.75)]), unit_box_1d, 6)
    gmp = F.build_wp_even(2, mu, nu, unit_box_1d)
    res = R.solve_order(gmp, 3)
    assert res.rho == pytest.approx(1 / 48, abs=1e-4)


def test_lower_bound_vs_product_coupling(unit_box_1d):
    mu = descriptor_moments(ClosedForm([("uniform", 0.0, 1.0)]), unit_box_1d, 6)
    nu = descriptor_moments(ClosedForm([("beta", 2.0, 2.0, 0.0, 1.0)]),
                            unit_box_1d, 6)
    gmp = F.build_wp_even(2, mu, nu, unit_box_1d)
    res = R.solve_order(gmp, 2)
    product = gmp.metadata["scaled_marginals"][0].tensor(
        gmp.metadata["scaled_marginals"][1], order=4)
    upper = gmp.objective.value({"plan": product})
    assert res.rho <= upper + 1e-7


def test_residual_contract_on_optimal(mask_pair, unit_box_2d):
    _, _, mu, nu = mask_pair
    gmp = F.build_wp_even(2, mu, nu, unit_box_2d)
    res = R.solve_order(gmp, 2)
    assert res.status == "optimal"
    assert res.residuals["max_equality_violation"] <= 1e-7
    for v in gmp.variables:
        seq = res.sequences[v.vid]
        assert seq.mass == pytest.approx(1.0, abs=1e-7)
        for g in v.support.inequalities:
            rj = (g.total_degree + 1) // 2
            lam = localizing_matrix(seq, g, res.order - rj).min_eigenvalue()
            assert lam >= -1e-7


def test_hierarchy_monotone_and_failures_recorded(unit_box_1d):
    mu = descriptor_moments(ClosedForm([("uniform", 0.0, 1.0)]), unit_box_1d, 6)
    nu = descriptor_moments(Empirical(np.array([[0.0], [1.0]])), unit_box_1d, 6)
    gmp = F.build_wp_odd(1, mu, nu, unit_box_1d)
    results = R.hierarchy(gmp, 1, 3)
    assert [res.order for res in results] == [1, 2, 3]
    flags = R.monotone_flags(results)
    assert all(flags)
    rhos = [res.rho for res in results]
    assert rhos == sorted(rhos)


def test_hierarchy_rejects_below_r_star(unit_box_1d):
    mu = dirac(0.5, unit_box_1d)
    gmp = F.build_wp_even(4, mu, mu, unit_box_1d)
    with pytest.raises(ValueError):
        R.hierarchy(gmp, 1, 3)


def test_dirac_hierarchy_constant(unit_box_1d):
    gmp = F.build_wp_even(2, dirac(0.1, unit_box_1d), dirac(0.7, unit_box_1d),
                          unit_box_1d)
    results = R.hierarchy(gmp, 1, 3)
    for res in results:
        assert res.rho == pytest.approx(0.36, abs=1e-6)


def test_natural_sequence_roundtrip(unit_box_1d):
    mu = descriptor_moments(ClosedForm([("uniform", 0.0, 1.0)]), unit_box_1d, 4)
    gmp = F.build_wp_even(2, mu, mu, unit_box_1d)
    res = R.solve_order(gmp, 1)
    nat = res.natural_sequence("plan")
    # marginal block of the natural plan reproduces the uniform moments
    assert nat[(1, 0)] == pytest.approx(0.5, abs=1e-7)
    assert nat[(2, 0)] == pytest.approx(1 / 3, abs=1e-7)


def test_result_json_dict(unit_box_1d):
    gmp = F.build_wp_even(2, dirac(0.0, unit_box_1d), dirac(0.6, unit_box_1d),
                          unit_box_1d)
    res = R.solve_order(gmp, 1)
    payload = res.to_json_dict()
    assert payload["order"] == 1
    assert payload["status"] == "optimal"
    assert "max_equality_violation" in payload["residuals"]
