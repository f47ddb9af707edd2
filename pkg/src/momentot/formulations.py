"""Generalized moment problems for optimal transport variants.

Builders produce a GeneralizedMomentProblem whose measure variables live in
rescaled coordinates (each support set carries its affine map back to
natural coordinates); marginal moment sequences supplied in natural
coordinates are transformed internally.  Objective values are invariant
under the rescaling because cost polynomials are substituted accordingly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .moments import (TruncatedMomentSequence, embed_marginal_index,
                      DegreeOverflowError)
from .polyalg import (AffineMap, Polynomial, SemialgebraicSet,
                      enumerate_indices, product_set)

ROLE_PLAN = "plan"
ROLE_SPLIT = "split piece"
ROLE_BARYCENTER = "barycenter"
ROLE_AUXILIARY = "auxiliary"


@dataclass(frozen=True)
class MeasureVariable:
    vid: str
    support: SemialgebraicSet
    role: str = ROLE_PLAN


@dataclass(frozen=True)
class LinearMomentFunctional:
    """Finite linear functional sum_k coef_k * y[vid_k][idx_k]."""
    terms: tuple  # ((vid, multi-index, coef), ...)

    def max_degree(self):
        return max((sum(idx) for _, idx, _ in self.terms), default=0)

    def value(self, sequences):
        return sum(c * sequences[vid][idx] for vid, idx, c in self.terms)

    @classmethod
    def from_polynomial(cls, vid, poly: Polynomial):
        items = sorted(poly.terms.items(), key=lambda kv: (sum(kv[0]), kv[0]))
        return cls(tuple((vid, idx, coef) for idx, coef in items))


@dataclass(frozen=True)
class QuadraticMomentFunctional:
    """Finite quadratic functional sum_k coef_k * y[vid][gL] * y[vid][gR]."""
    terms: tuple  # ((vid, gammaL, gammaR, coef), ...)

    def max_left_degree(self):
        return max((sum(gl) for _, gl, _, _ in self.terms), default=0)

    def max_right_degree(self):
        return max((sum(gr) for _, _, gr, _ in self.terms), default=0)

    def value(self, sequences):
        return sum(c * sequences[vid][gl] * sequences[vid][gr]
                   for vid, gl, gr, c in self.terms)


@dataclass
class GeneralizedMomentProblem:
    """Measure variables, a moment objective, and linear moment equalities.

    masses maps each variable id to ("eq", 1.0) or ("le", 1.0); built_order
    is the largest moment degree the stored constraints cover, which caps
    the relaxation order at built_order // 2.
    """
    variables: tuple
    objective: object          # LinearMomentFunctional | QuadraticMomentFunctional
    constraints: tuple         # ((LinearMomentFunctional, rhs), ...)
    masses: dict
    metadata: dict

    def __post_init__(self):
        ids = [v.vid for v in self.variables]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate variable ids")
        for vid in self.masses:
            if vid not in ids:
                raise ValueError(f"mass constraint on unknown variable {vid}")
        for vid in ids:
            if vid not in self.masses:
                raise ValueError(f"variable {vid} has no mass constraint")
            mode, _ = self.masses[vid]
            if mode not in ("eq", "le"):
                raise ValueError(f"unknown mass mode {mode!r}")
        dims = {v.vid: v.support.dimension for v in self.variables}
        for lin, _ in self.constraints:
            for vid, idx, _ in lin.terms:
                if vid not in dims:
                    raise ValueError(f"constraint references unknown variable {vid}")
                if len(idx) != dims[vid]:
                    raise ValueError("constraint index dimension mismatch")

    def variable(self, vid) -> MeasureVariable:
        for v in self.variables:
            if v.vid == vid:
                return v
        raise KeyError(vid)

    @property
    def built_order(self):
        return self.metadata["built_order"]

    def is_quadratic(self):
        return isinstance(self.objective, QuadraticMomentFunctional)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _check_probability(seq, label):
    if abs(seq.mass - 1.0) > 1e-10:
        raise ValueError(f"{label} is not probability-normalized (mass {seq.mass})")


def _to_scaled(seq: TruncatedMomentSequence, amap: AffineMap):
    """Natural-coordinate moments -> moments in the set's scaled coordinates."""
    if amap.is_identity():
        return seq
    inv_scale = [1.0 / s for s in amap.scale]
    inv_offset = [-t / s for t, s in zip(amap.offset, amap.scale)]
    return seq.pushforward_affine(inv_scale, inv_offset)


def to_natural(seq: TruncatedMomentSequence, amap: AffineMap):
    """Scaled-coordinate moments -> natural coordinates."""
    if amap.is_identity():
        return seq
    return seq.pushforward_affine(amap.scale, amap.offset)


def _marginal_rows(vid, structure, factor, seq, order):
    rows = []
    n_i = structure.factor_dimensions[factor]
    for beta in enumerate_indices(n_i, min(order, seq.order)):
        idx = embed_marginal_index(structure, factor, beta)
        lin = LinearMomentFunctional(((vid, idx, 1.0),))
        rows.append((lin, seq[beta]))
    return rows


def _lp_cost(p, d):
    """|x - y|_p^p as a polynomial on R^{2d} (first block x, second y)."""
    total = Polynomial.zero(2 * d)
    for i in range(d):
        xi = Polynomial.variable(2 * d, i)
        yi = Polynomial.variable(2 * d, d + i)
        total = total + (xi - yi) ** p
    return total


def _plan_space(set_):
    prod, structure = product_set([set_, set_])
    return prod, structure


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_multimarginal(cost: Polynomial, marginals, sets,
                        kind="multimarginal", extra_metadata=None):
    """Single-plan moment problem for a polynomial cost on a product set."""
    sets = list(sets)
    marginals = list(marginals)
    if len(sets) != len(marginals):
        raise ValueError("need one marginal per factor set")
    n = sum(s.dimension for s in sets)
    if cost.dimension != n:
        raise ValueError(f"cost has dimension {cost.dimension}, product is {n}")
    for i, (seq, s) in enumerate(zip(marginals, sets)):
        if seq.dimension != s.dimension:
            raise ValueError(f"marginal {i} dimension mismatch")
        _check_probability(seq, f"marginal {i}")
    prod, structure = product_set(sets)
    amap = prod.transform
    scaled_cost = amap.pull_polynomial(cost)
    scaled_marginals = [_to_scaled(seq, s.transform)
                        for seq, s in zip(marginals, sets)]
    order = min(seq.order for seq in marginals)
    vid = "plan"
    rows = []
    for i, seq in enumerate(scaled_marginals):
        rows.extend(_marginal_rows(vid, structure, i, seq, order))
    meta = {
        "kind": kind,
        "structure": structure,
        "built_order": order,
        "scaled_marginals": scaled_marginals,
        "plan_vid": vid,
    }
    meta.update(extra_metadata or {})
    return GeneralizedMomentProblem(
        variables=(MeasureVariable(vid, prod, ROLE_PLAN),),
        objective=LinearMomentFunctional.from_polynomial(vid, scaled_cost),
        constraints=tuple(rows),
        masses={vid: ("eq", 1.0)},
        metadata=meta,
    )


def build_wp_even(p: int, mu, nu, set_: SemialgebraicSet):
    """W_p^p moment problem for even p via the binomial expansion."""
    if p % 2 != 0 or p < 2:
        raise ValueError("p must be even; use build_wp_odd for odd p")
    d = set_.dimension
    if mu.dimension != d or nu.dimension != d:
        raise ValueError("marginal dimension mismatch")
    return build_multimarginal(_lp_cost(p, d), [mu, nu], [set_, set_],
                               kind="wasserstein",
                               extra_metadata={"p": p})


def build_wp_odd(p: int, mu, nu, set_: SemialgebraicSet):
    """W_p^p for odd p via 2d sign-split measures; the plan variable is
    eliminated and represented as the sum of the first split pair."""
    if p % 2 != 1 or p < 1:
        raise ValueError("p must be odd")
    d = set_.dimension
    if mu.dimension != d or nu.dimension != d:
        raise ValueError("marginal dimension mismatch")
    _check_probability(mu, "mu")
    _check_probability(nu, "nu")
    prod, structure = _plan_space(set_)
    amap = prod.transform
    n = prod.dimension
    order = min(mu.order, nu.order)
    mu_s = _to_scaled(mu, set_.transform)
    nu_s = _to_scaled(nu, set_.transform)

    variables = []
    obj_terms = []
    for i in range(d):
        xi = Polynomial.variable(2 * d, i)
        yi = Polynomial.variable(2 * d, d + i)
        sign = amap.pull_polynomial(xi - yi).normalized()
        set_plus = prod.with_inequalities([sign])
        set_minus = prod.with_inequalities([-sign])
        variables.append(MeasureVariable(f"split{i}+", set_plus, ROLE_SPLIT))
        variables.append(MeasureVariable(f"split{i}-", set_minus, ROLE_SPLIT))
        cost_i = amap.pull_polynomial((xi - yi) ** p)
        for idx, coef in sorted(cost_i.terms.items(), key=lambda kv: (sum(kv[0]), kv[0])):
            obj_terms.append((f"split{i}+", idx, coef))
            obj_terms.append((f"split{i}-", idx, -coef))

    rows = []
    # linking: split pair sums agree with the first pair at every index
    for i in range(1, d):
        for gamma in enumerate_indices(n, order):
            lin = LinearMomentFunctional((
                ("split0+", gamma, 1.0), ("split0-", gamma, 1.0),
                (f"split{i}+", gamma, -1.0), (f"split{i}-", gamma, -1.0)))
            rows.append((lin, 0.0))
    # marginals imposed on the sum of the first split pair
    for factor, seq in ((0, mu_s), (1, nu_s)):
        for beta in enumerate_indices(d, order):
            idx = embed_marginal_index(structure, factor, beta)
            lin = LinearMomentFunctional((("split0+", idx, 1.0),
                                          ("split0-", idx, 1.0)))
            rows.append((lin, seq[beta]))

    return GeneralizedMomentProblem(
        variables=tuple(variables),
        objective=LinearMomentFunctional(tuple(obj_terms)),
        constraints=tuple(rows),
        masses={v.vid: ("le", 1.0) for v in variables},
        metadata={"kind": "wasserstein", "p": p, "structure": structure,
                  "built_order": order,
                  "scaled_marginals": [mu_s, nu_s],
                  "plan_split": ("split0+", "split0-")},
    )


def build_piecewise(pieces, marginals, sets):
    """Moment problem for an l.s.c. piecewise polynomial cost.

    pieces: sequence of (cost polynomial, partition inequalities) in natural
    product-space coordinates; the closures of the partition cells must be
    basic semi-algebraic and cover the product set (asserted by the caller).
    """
    pieces = list(pieces)
    if not pieces:
        raise ValueError("need at least one piece")
    sets = list(sets)
    marginals = list(marginals)
    for i, (seq, s) in enumerate(zip(marginals, sets)):
        _check_probability(seq, f"marginal {i}")
    prod, structure = product_set(sets)
    amap = prod.transform
    n = prod.dimension
    order = min(seq.order for seq in marginals)
    scaled_marginals = [_to_scaled(seq, s.transform)
                        for seq, s in zip(marginals, sets)]

    variables = []
    obj_terms = []
    for k, (cost, ineqs) in enumerate(pieces):
        if cost.dimension != n:
            raise ValueError(f"piece {k} cost dimension mismatch")
        scaled_ineqs = [amap.pull_polynomial(g).normalized() for g in ineqs]
        support = prod.with_inequalities(scaled_ineqs) if scaled_ineqs else prod
        vid = f"piece{k}"
        variables.append(MeasureVariable(vid, support, ROLE_SPLIT))
        scaled_cost = amap.pull_polynomial(cost)
        for idx, coef in sorted(scaled_cost.terms.items(),
                                key=lambda kv: (sum(kv[0]), kv[0])):
            obj_terms.append((vid, idx, coef))

    rows = []
    for factor, seq in enumerate(scaled_marginals):
        for beta in enumerate_indices(seq.dimension, order):
            idx = embed_marginal_index(structure, factor, beta)
            lin = LinearMomentFunctional(tuple((v.vid, idx, 1.0) for v in variables))
            rows.append((lin, seq[beta]))

    return GeneralizedMomentProblem(
        variables=tuple(variables),
        objective=LinearMomentFunctional(tuple(obj_terms)),
        constraints=tuple(rows),
        masses={v.vid: ("le", 1.0) for v in variables},
        metadata={"kind": "piecewise", "structure": structure,
                  "built_order": order, "scaled_marginals": scaled_marginals},
    )


def build_barycenter_wp(p: int, measures, weights, set_: SemialgebraicSet):
    """Wasserstein barycenter moment problem; weights live on the simplex.

    The odd-p variant follows the split construction; it is implemented as
    stated but has seen no published numerical validation, so treat it as
    experimental.
    """
    measures = list(measures)
    weights = [float(w) for w in weights]
    if len(weights) != len(measures):
        raise ValueError("need one weight per measure")
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-10:
        raise ValueError("weights must be nonnegative and sum to 1")
    d = set_.dimension
    for i, m in enumerate(measures):
        if m.dimension != d:
            raise ValueError(f"measure {i} dimension mismatch")
        _check_probability(m, f"measure {i}")
    prod, structure = _plan_space(set_)
    amap = prod.transform
    n = prod.dimension
    order = min(m.order for m in measures)
    scaled = [_to_scaled(m, set_.transform) for m in measures]
    N = len(measures)

    if p % 2 == 0 and p >= 2:
        variables = tuple(MeasureVariable(f"plan{i}", prod, ROLE_PLAN)
                          for i in range(N))
        cost = amap.pull_polynomial(_lp_cost(p, d))
        obj_terms = []
        for i, lam in enumerate(weights):
            if lam == 0.0:
                continue
            for idx, coef in sorted(cost.terms.items(),
                                    key=lambda kv: (sum(kv[0]), kv[0])):
                obj_terms.append((f"plan{i}", idx, lam * coef))
        rows = []
        for i, seq in enumerate(scaled):
            rows.extend(_marginal_rows(f"plan{i}", structure, 1, seq, order))
        # shared left marginal, imposed between consecutive plans
        for i in range(N - 1):
            for beta in enumerate_indices(d, order):
                if sum(beta) == 0:
                    continue
                idx = embed_marginal_index(structure, 0, beta)
                lin = LinearMomentFunctional(((f"plan{i}", idx, 1.0),
                                              (f"plan{i + 1}", idx, -1.0)))
                rows.append((lin, 0.0))
        return GeneralizedMomentProblem(
            variables=variables,
            objective=LinearMomentFunctional(tuple(obj_terms)),
            constraints=tuple(rows),
            masses={v.vid: ("eq", 1.0) for v in variables},
            metadata={"kind": "barycenter", "p": p, "structure": structure,
                      "built_order": order, "weights": tuple(weights),
                      "scaled_marginals": scaled,
                      "barycenter_plan": "plan0"},
        )

    if p % 2 == 1 and p >= 1:
        variables = []
        obj_terms = []
        signs = []
        for j in range(d):
            xj = Polynomial.variable(2 * d, j)
            yj = Polynomial.variable(2 * d, d + j)
            signs.append(amap.pull_polynomial(xj - yj).normalized())
        costs = [amap.pull_polynomial(
            (Polynomial.variable(2 * d, j) - Polynomial.variable(2 * d, d + j)) ** p)
            for j in range(d)]
        for i in range(N):
            for j in range(d):
                sp_ = prod.with_inequalities([signs[j]])
                sm_ = prod.with_inequalities([-signs[j]])
                variables.append(MeasureVariable(f"plan{i}.split{j}+", sp_, ROLE_SPLIT))
                variables.append(MeasureVariable(f"plan{i}.split{j}-", sm_, ROLE_SPLIT))
                lam = weights[i]
                if lam == 0.0:
                    continue
                for idx, coef in sorted(costs[j].terms.items(),
                                        key=lambda kv: (sum(kv[0]), kv[0])):
                    obj_terms.append((f"plan{i}.split{j}+", idx, lam * coef))
                    obj_terms.append((f"plan{i}.split{j}-", idx, -lam * coef))
        rows = []
        for i in range(N):
            # consecutive split sums agree (the eliminated plan variable)
            for j in range(d - 1):
                for gamma in enumerate_indices(n, order):
                    lin = LinearMomentFunctional((
                        (f"plan{i}.split{j}+", gamma, 1.0),
                        (f"plan{i}.split{j}-", gamma, 1.0),
                        (f"plan{i}.split{j + 1}+", gamma, -1.0),
                        (f"plan{i}.split{j + 1}-", gamma, -1.0)))
                    rows.append((lin, 0.0))
            # right marginal on the first split sum
            for beta in enumerate_indices(d, order):
                idx = embed_marginal_index(structure, 1, beta)
                lin = LinearMomentFunctional(((f"plan{i}.split0+", idx, 1.0),
                                              (f"plan{i}.split0-", idx, 1.0)))
                rows.append((lin, scaled[i][beta]))
        # shared left marginal between consecutive measures
        for i in range(N - 1):
            for beta in enumerate_indices(d, order):
                if sum(beta) == 0:
                    continue
                idx = embed_marginal_index(structure, 0, beta)
                lin = LinearMomentFunctional((
                    (f"plan{i}.split0+", idx, 1.0),
                    (f"plan{i}.split0-", idx, 1.0),
                    (f"plan{i + 1}.split0+", idx, -1.0),
                    (f"plan{i + 1}.split0-", idx, -1.0)))
                rows.append((lin, 0.0))
        return GeneralizedMomentProblem(
            variables=tuple(variables),
            objective=LinearMomentFunctional(tuple(obj_terms)),
            constraints=tuple(rows),
            masses={v.vid: ("le", 1.0) for v in variables},
            metadata={"kind": "barycenter", "p": p, "structure": structure,
                      "built_order": order, "weights": tuple(weights),
                      "scaled_marginals": scaled,
                      "barycenter_split": ("plan0.split0+", "plan0.split0-"),
                      "experimental": True},
        )

    raise ValueError("p must be a positive integer")


def _lq_intra_cost(d, q):
    """|x - x'|_q^q on R^{2d} (first block x, second x')."""
    if q % 2 != 0 or q < 2:
        raise ValueError("only even q is supported for generated costs")
    return _lp_cost(q, d)


def build_gw_even(p: int, cX, cY, mu, nu, setX, setY, q=None):
    """Quadratic moment problem for GW_p with even p and polynomial costs.

    cX and cY act on X x X and Y x Y respectively; pass cX=cY=None with an
    even q to generate the |.|_q^q costs internally (GW_{p,q}).
    """
    if p % 2 != 0 or p < 2:
        raise ValueError("p must be even (odd p is out of scope)")
    dX, dY = setX.dimension, setY.dimension
    if cX is None or cY is None:
        if q is None:
            raise ValueError("provide costs or an even q")
        cX = _lq_intra_cost(dX, q)
        cY = _lq_intra_cost(dY, q)
    if cX.dimension != 2 * dX or cY.dimension != 2 * dY:
        raise ValueError("cost dimension mismatch")
    if mu.dimension != dX or nu.dimension != dY:
        raise ValueError("marginal dimension mismatch")
    _check_probability(mu, "mu")
    _check_probability(nu, "nu")

    prod, structure = product_set([setX, setY])
    n = prod.dimension
    mapX, mapY = setX.transform, setY.transform
    cX_s = cX.affine_substitute(mapX.scale * 2, mapX.offset * 2)
    cY_s = cY.affine_substitute(mapY.scale * 2, mapY.offset * 2)
    # augmented coordinates z = (x, y, x', y'), each block scaled
    gx = cX_s.map_variables(2 * n, list(range(dX)) + list(range(n, n + dX)))
    gy = cY_s.map_variables(2 * n, list(range(dX, n)) + list(range(n + dX, 2 * n)))
    g = gx - gy
    gp = g ** p

    vid = "plan"
    qterms = []
    for gamma, coef in sorted(gp.terms.items(), key=lambda kv: (sum(kv[0]), kv[0])):
        qterms.append((vid, gamma[:n], gamma[n:], coef))

    mu_s = _to_scaled(mu, mapX)
    nu_s = _to_scaled(nu, mapY)
    order = min(mu.order, nu.order)
    rows = []
    rows.extend(_marginal_rows(vid, structure, 0, mu_s, order))
    rows.extend(_marginal_rows(vid, structure, 1, nu_s, order))

    return GeneralizedMomentProblem(
        variables=(MeasureVariable(vid, prod, ROLE_PLAN),),
        objective=QuadraticMomentFunctional(tuple(qterms)),
        constraints=tuple(rows),
        masses={vid: ("eq", 1.0)},
        metadata={"kind": "gw", "p": p, "q": q, "structure": structure,
                  "built_order": order,
                  "scaled_marginals": [mu_s, nu_s],
                  "plan_vid": vid},
    )


def gw_linearize(problem: GeneralizedMomentProblem, y_prev) -> LinearMomentFunctional:
    """Linear functional y -> L(y (x) y_prev) of the quadratic objective."""
    if not problem.is_quadratic():
        raise ValueError("problem objective is not quadratic")
    if isinstance(y_prev, TruncatedMomentSequence):
        vids = {t[0] for t in problem.objective.terms}
        if len(vids) != 1:
            raise ValueError("pass a dict of sequences for multi-variable objectives")
        y_prev = {next(iter(vids)): y_prev}
    acc = {}
    for vid, gl, gr, coef in problem.objective.terms:
        seq = y_prev[vid]
        if sum(gr) > seq.order:
            raise DegreeOverflowError(
                f"linearization point order {seq.order} < right degree {sum(gr)}")
        key = (vid, gl)
        acc[key] = acc.get(key, 0.0) + coef * seq[gr]
    terms = tuple((vid, gl, c) for (vid, gl), c in
                  sorted(acc.items(), key=lambda kv: (kv[0][0], sum(kv[0][1]), kv[0][1]))
                  if c != 0.0)
    return LinearMomentFunctional(terms)


@dataclass
class FixedPointResult:
    trace: list                # quadratic objective value per iteration
    sequences: dict            # best iterate, scaled coordinates
    best_iteration: int
    converged: bool
    iterations: int
    statuses: list

    @property
    def objective(self):
        return self.trace[self.best_iteration]


def gw_fixed_point(problem, r, init=None, tol=1e-7, max_iter=50,
                   solver_options=None):
    """Fixed-point iteration for the quadratic GW objective at order r.

    Each step minimizes the objective linearized at the previous iterate;
    the returned sequences are the best iterate by quadratic objective,
    since the scheme carries no monotonicity guarantee.

    init may be a single moment sequence or a list of them; with a list
    the iteration restarts from each seed and the best run wins.  The
    default seed is the product measure, which on symmetric instances can
    be a stationary saddle of the scheme, so callers with structured data
    may want to add monotone-coupling style seeds.
    """
    from . import relaxation
    from .conic import SolverFailure

    if not problem.is_quadratic():
        raise ValueError("gw_fixed_point needs a quadratic objective")
    mu_s, nu_s = problem.metadata["scaled_marginals"]
    vid = problem.metadata["plan_vid"]
    if init is None:
        init = mu_s.tensor(nu_s, order=min(2 * r, min(mu_s.order, nu_s.order)))
    seeds = list(init) if isinstance(init, (list, tuple)) else [init]

    asm = relaxation._assemble(problem, r,
                               objective_override=gw_linearize(problem, {vid: seeds[0]}))
    options = solver_options or {}
    best_run = None
    for seed in seeds:
        prev = {vid: seed}
        trace = []
        statuses = []
        best = None
        best_val = math.inf
        best_it = -1
        converged = False
        for k in range(max_iter):
            asm = asm.with_objective(gw_linearize(problem, prev))
            try:
                result = relaxation._solve_assembly(asm, options)
            except SolverFailure as exc:
                raise SolverFailure(
                    f"fixed-point iteration {k}: {exc}", exc.report) from exc
            statuses.append(result.status)
            seqs = result.sequences
            val = problem.objective.value(seqs)
            trace.append(val)
            if val < best_val:
                best_val = val
                best = seqs
                best_it = k
            if k > 0 and abs(trace[-1] - trace[-2]) <= tol * max(1.0, abs(trace[-1])):
                converged = True
                break
            prev = seqs
        run = FixedPointResult(trace, best, best_it, converged, len(trace), statuses)
        if best_run is None or run.trace[run.best_iteration] < best_run.trace[best_run.best_iteration]:
            best_run = run
    return best_run


def identity_coupling(seq: TruncatedMomentSequence, order) -> TruncatedMomentSequence:
    """Moments of (id, id) pushforward: the diagonal coupling of seq with
    itself, m_(a, b) = seq[a + b]; needs seq order >= the requested order."""
    n = seq.dimension
    vals = {}
    for gamma in enumerate_indices(2 * n, order):
        a = tuple(gamma[i] + gamma[n + i] for i in range(n))
        vals[gamma] = seq[a]
    return TruncatedMomentSequence.from_dict(2 * n, order, vals, seq.probability)


def coupling_init(problem, points, weights=None, order=None):
    """Moment sequence of an explicit empirical coupling on the plan space,
    in the plan's scaled coordinates; handy as a fixed-point seed."""
    from .moments import Empirical, descriptor_moments
    support = problem.variable(problem.metadata["plan_vid"]).support
    desc = Empirical(np.asarray(points, dtype=float), weights)
    desc = desc.rescaled(support.transform)
    order = problem.built_order if order is None else order
    return descriptor_moments(desc, None, order, validate=False)


def build_gw_barycenter(measures, weights, setX, setY, p=2, q=2):
    """GW_{p,q} barycenter problem (p = q = 2 is the supported regime).

    The barycenter variable lives on setX; one plan variable per input
    measure couples it to that measure on setX x setY.
    """
    if p != 2 or q != 2:
        raise ValueError("only p = q = 2 is in scope for GW barycenters")
    measures = list(measures)
    weights = [float(w) for w in weights]
    if len(weights) != len(measures):
        raise ValueError("need one weight per measure")
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-10:
        raise ValueError("weights must be nonnegative and sum to 1")
    dX, dY = setX.dimension, setY.dimension
    for i, m in enumerate(measures):
        if m.dimension != dY:
            raise ValueError(f"measure {i} dimension mismatch")
        _check_probability(m, f"measure {i}")

    prod, structure = product_set([setX, setY])
    n = prod.dimension
    mapX, mapY = setX.transform, setY.transform
    cX = _lq_intra_cost(dX, q).affine_substitute(mapX.scale * 2, mapX.offset * 2)
    cY = _lq_intra_cost(dY, q).affine_substitute(mapY.scale * 2, mapY.offset * 2)
    gx = cX.map_variables(2 * n, list(range(dX)) + list(range(n, n + dX)))
    gy = cY.map_variables(2 * n, list(range(dX, n)) + list(range(n + dX, 2 * n)))
    gp = (gx - gy) ** p

    scaled = [_to_scaled(m, mapY) for m in measures]
    order = min(m.order for m in measures)
    N = len(measures)

    variables = [MeasureVariable("bar", setX, ROLE_BARYCENTER)]
    qterms = []
    for i in range(N):
        vid = f"plan{i}"
        variables.append(MeasureVariable(vid, prod, ROLE_PLAN))
        lam = weights[i]
        if lam == 0.0:
            continue
        for gamma, coef in sorted(gp.terms.items(), key=lambda kv: (sum(kv[0]), kv[0])):
            qterms.append((vid, gamma[:n], gamma[n:], lam * coef))

    rows = []
    for i, seq in enumerate(scaled):
        vid = f"plan{i}"
        rows.extend(_marginal_rows(vid, structure, 1, seq, order))
        for beta in enumerate_indices(dX, order):
            if sum(beta) == 0:
                continue
            idx = embed_marginal_index(structure, 0, beta)
            lin = LinearMomentFunctional(((vid, idx, 1.0), ("bar", beta, -1.0)))
            rows.append((lin, 0.0))

    masses = {"bar": ("eq", 1.0)}
    masses.update({f"plan{i}": ("eq", 1.0) for i in range(N)})
    return GeneralizedMomentProblem(
        variables=tuple(variables),
        objective=QuadraticMomentFunctional(tuple(qterms)),
        constraints=tuple(rows),
        masses=masses,
        metadata={"kind": "gw_barycenter", "p": p, "q": q,
                  "structure": structure, "built_order": order,
                  "weights": tuple(weights), "scaled_marginals": scaled,
                  "barycenter_vid": "bar"},
    )


def gw_barycenter_fixed_point(problem, r, init=None, tol=1e-7, max_iter=50,
                              solver_options=None):
    """Joint fixed-point driver for the GW barycenter problem.

    The iterate linearizes each plan's quadratic term at that plan's
    previous sequence.  The default initialization takes the barycenter
    guess at the moments of the dominant input measure; that measure's own
    plan is seeded with the identity coupling (which already realizes zero
    loss for its term), the others with tensor products.
    """
    from . import relaxation
    from .conic import SolverFailure

    weights = problem.metadata["weights"]
    scaled = problem.metadata["scaled_marginals"]
    N = len(scaled)
    plan_vids = [f"plan{i}" for i in range(N)]
    if init is None:
        pick = max(range(N), key=lambda i: (weights[i], -i))
        bar0 = scaled[pick]
        if bar0.dimension != problem.variable("bar").support.dimension:
            raise ValueError("dimension mismatch: pass an explicit init")
        bar0 = bar0.restrict(min(2 * r, bar0.order))
        prev = {}
        for i, (vid, seq) in enumerate(zip(plan_vids, scaled)):
            if i == pick:
                prev[vid] = identity_coupling(scaled[pick],
                                              min(2 * r, scaled[pick].order))
            else:
                prev[vid] = bar0.tensor(seq, order=min(2 * r, bar0.order, seq.order))
    else:
        prev = dict(init)

    asm = None
    trace = []
    statuses = []
    best = None
    best_val = math.inf
    best_it = -1
    converged = False
    options = solver_options or {}
    for k in range(max_iter):
        lin = gw_linearize(problem, prev)
        if asm is None:
            asm = relaxation._assemble(problem, r, objective_override=lin)
        else:
            asm = asm.with_objective(lin)
        try:
            result = relaxation._solve_assembly(asm, options)
        except SolverFailure as exc:
            raise SolverFailure(
                f"barycenter fixed-point iteration {k}: {exc}", exc.report) from exc
        statuses.append(result.status)
        seqs = result.sequences
        val = problem.objective.value(seqs)
        trace.append(val)
        if val < best_val:
            best_val = val
            best = seqs
            best_it = k
        if k > 0 and abs(trace[-1] - trace[-2]) <= tol * max(1.0, abs(trace[-1])):
            converged = True
            break
        prev = {vid: seqs[vid] for vid in plan_vids}
    return FixedPointResult(trace, best, best_it, converged, len(trace), statuses)


# ---------------------------------------------------------------------------
# solution extraction
# ---------------------------------------------------------------------------

def plan_sequence(problem, sequences) -> TruncatedMomentSequence:
    """Moment sequence of the transport plan, scaled coordinates.

    For split formulations this is the sum of the first split pair.
    """
    meta = problem.metadata
    if "plan_vid" in meta:
        return sequences[meta["plan_vid"]]
    if "plan_split" in meta:
        a, b = meta["plan_split"]
        sa, sb = sequences[a], sequences[b]
        return TruncatedMomentSequence(sa.dimension, sa.order, sa.array + sb.array)
    raise ValueError("problem has no plan extraction rule")


def barycenter_sequence(problem, sequences) -> TruncatedMomentSequence:
    """Moment sequence of the barycenter measure, scaled coordinates."""
    meta = problem.metadata
    if "barycenter_vid" in meta:
        return sequences[meta["barycenter_vid"]]
    structure = meta["structure"]
    d = structure.factor_dimensions[0]
    if "barycenter_plan" in meta:
        plan = sequences[meta["barycenter_plan"]]
    else:
        a, b = meta["barycenter_split"]
        sa, sb = sequences[a], sequences[b]
        plan = TruncatedMomentSequence(sa.dimension, sa.order, sa.array + sb.array)
    values = {}
    for beta in enumerate_indices(d, plan.order):
        values[beta] = plan[embed_marginal_index(structure, 0, beta)]
    return TruncatedMomentSequence.from_dict(d, plan.order, values)
