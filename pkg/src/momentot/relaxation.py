"""Order-r semidefinite relaxations: compile a GeneralizedMomentProblem to
a conic program, solve it, and sweep the hierarchy.

The decision vector of an assembled program is the concatenation of the
truncated moment sequences (graded-lex, order 2r each) as free scalars,
followed by one packed PSD block per (variable, inequality) pair and a
nonnegative slack per bounded-mass variable.  Each PSD entry is tied to
the scalars by one definitional equality row; a moment y_alpha therefore
exists exactly once no matter how many matrix positions reference it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from . import conic
from .conic import ConeBlock, ConicProgram, SolverFailure
from .formulations import (GeneralizedMomentProblem, LinearMomentFunctional,
                           QuadraticMomentFunctional)
from .moments import (TruncatedMomentSequence, localizing_matrix)
from .polyalg import (Polynomial, basis_size, enumerate_indices,
                      index_positions)

STATUS_OPTIMAL = conic.STATUS_OPTIMAL
STATUS_NEAR = conic.STATUS_NEAR
STATUS_INFEASIBLE = conic.STATUS_INFEASIBLE
STATUS_FAILURE = conic.STATUS_FAILURE


def _objective_r_g(objective):
    if isinstance(objective, QuadraticMomentFunctional):
        # the fixed point solves linearized problems with these left degrees
        return objective.max_left_degree()
    return objective.max_degree()


def min_order(gmp: GeneralizedMomentProblem, objective=None) -> int:
    """Smallest admissible relaxation order r* for the problem."""
    r_g = _objective_r_g(objective if objective is not None else gmp.objective)
    r_star = max(1, math.ceil(r_g / 2))
    for v in gmp.variables:
        for g in v.support.inequalities:
            r_star = max(r_star, math.ceil(g.total_degree / 2))
    return r_star


@dataclass(frozen=True)
class RelaxationOrder:
    r: int
    r_star: int

    def __post_init__(self):
        if self.r < self.r_star:
            raise ValueError(f"order {self.r} below minimum {self.r_star}")


@dataclass
class Assembly:
    """Assembled conic program plus the bookkeeping to read solutions back."""
    program: ConicProgram
    gmp: GeneralizedMomentProblem
    r: int
    scalar_offset: dict        # vid -> first column of its moment scalars
    block_meta: tuple          # ((vid, label, polynomial, block order), ...)

    def objective_vector(self, lin: LinearMomentFunctional) -> np.ndarray:
        c = np.zeros(self.program.n)
        for vid, idx, coef in lin.terms:
            if sum(idx) > 2 * self.r:
                raise ValueError("objective degree exceeds 2r")
            n_v = self.gmp.variable(vid).support.dimension
            c[self.scalar_offset[vid] + index_positions(n_v, 2 * self.r)[idx]] += coef
        return c

    def with_objective(self, lin: LinearMomentFunctional) -> "Assembly":
        return Assembly(self.program.with_objective(self.objective_vector(lin)),
                        self.gmp, self.r, self.scalar_offset, self.block_meta)

    def extract(self, z) -> dict:
        out = {}
        for v in self.gmp.variables:
            n_v = v.support.dimension
            k = basis_size(n_v, 2 * self.r)
            off = self.scalar_offset[v.vid]
            out[v.vid] = TruncatedMomentSequence(n_v, 2 * self.r,
                                                 np.array(z[off:off + k]))
        return out


def _assemble(gmp: GeneralizedMomentProblem, r: int, objective_override=None,
              schmudgen=False) -> Assembly:
    r_star = min_order(gmp, objective_override)
    if r < r_star:
        raise ValueError(f"relaxation order {r} is below r* = {r_star}")
    if 2 * r > gmp.built_order:
        raise ValueError(
            f"order {r} needs marginal moments to degree {2 * r}, but the "
            f"problem was built with degree {gmp.built_order}; rebuild with "
            f"higher-order marginals")
    objective = objective_override if objective_override is not None else gmp.objective
    if isinstance(objective, QuadraticMomentFunctional):
        raise ValueError("quadratic objective: linearize with gw_linearize first")

    scalar_offset = {}
    names = []
    acc = 0
    for v in gmp.variables:
        scalar_offset[v.vid] = acc
        idx = enumerate_indices(v.support.dimension, 2 * r)
        names.extend(f"{v.vid}:y{a}" for a in idx)
        acc += len(idx)
    n_scalars = acc

    # cone blocks, one per (variable, inequality product)
    block_meta = []
    for v in gmp.variables:
        n_v = v.support.dimension
        gens = list(v.support.inequalities)
        items = [("g0", Polynomial.constant(n_v, 1.0))]
        items += [(f"g{j + 1}", g) for j, g in enumerate(gens)]
        if schmudgen:
            if len(gens) > 12:
                raise ValueError("schmudgen mode limited to 12 inequalities")
            for size in range(2, len(gens) + 1):
                for sel in combinations(range(len(gens)), size):
                    prod = gens[sel[0]]
                    for j in sel[1:]:
                        prod = prod * gens[j]
                    if math.ceil(prod.total_degree / 2) <= r:
                        items.append(("g" + "*".join(str(j + 1) for j in sel), prod))
        for label, g in items:
            br = r - math.ceil(g.total_degree / 2)
            if br < 0:
                continue
            block_meta.append((v.vid, label, g, br))

    blocks = [ConeBlock("free", n_scalars)]
    rows = []          # (coeff dict col->val, rhs)
    col = n_scalars
    for vid, label, g, br in block_meta:
        n_v = gmp.variable(vid).support.dimension
        basis = enumerate_indices(n_v, br)
        pos = index_positions(n_v, 2 * r)
        off = scalar_offset[vid]
        size = len(basis)
        blocks.append(ConeBlock("psd", size))
        for i in range(size):
            for j in range(i, size):
                coeffs = {col: 1.0}
                for gamma, cg in g.terms.items():
                    target = tuple(a + b + c_ for a, b, c_ in
                                   zip(basis[i], basis[j], gamma))
                    cc = off + pos[target]
                    coeffs[cc] = coeffs.get(cc, 0.0) - cg
                rows.append((coeffs, 0.0))
                names.append(f"{vid}:{label}[{i},{j}]")
                col += 1

    # mass slacks
    slack_specs = []
    for v in gmp.variables:
        mode, value = gmp.masses[v.vid]
        if mode == "le":
            slack_specs.append((v.vid, value))
    if slack_specs:
        blocks.append(ConeBlock("nonneg", len(slack_specs)))
        for vid, value in slack_specs:
            rows.append(({col: 1.0, scalar_offset[vid]: 1.0}, value))
            names.append(f"{vid}:mass_slack")
            col += 1

    # data rows: mass equalities plus the Gamma_r-filtered constraints
    data_rows = []
    for v in gmp.variables:
        mode, value = gmp.masses[v.vid]
        if mode == "eq":
            data_rows.append(({scalar_offset[v.vid]: 1.0}, value))
    for lin, rhs in gmp.constraints:
        if lin.max_degree() > 2 * r:
            continue
        coeffs = {}
        for vid, idx, coef in lin.terms:
            n_v = gmp.variable(vid).support.dimension
            cc = scalar_offset[vid] + index_positions(n_v, 2 * r)[idx]
            coeffs[cc] = coeffs.get(cc, 0.0) + coef
        coeffs = {k: v for k, v in coeffs.items() if v != 0.0}
        if coeffs:
            data_rows.append((coeffs, rhs))

    seen = set()
    for coeffs, rhs in data_rows:
        key = (tuple(sorted(coeffs.items())), rhs)
        if key in seen:
            continue
        seen.add(key)
        rows.append((coeffs, rhs))

    ri, ci, vv = [], [], []
    b = np.empty(len(rows))
    for k, (coeffs, rhs) in enumerate(rows):
        b[k] = rhs
        for c_, v_ in coeffs.items():
            ri.append(k)
            ci.append(c_)
            vv.append(v_)
    A = sp.csr_matrix((vv, (ri, ci)), shape=(len(rows), col))

    program = ConicProgram(blocks, np.zeros(col), A, b, names=names)
    asm = Assembly(program, gmp, r, scalar_offset, tuple(block_meta))
    return asm.with_objective(objective)


def assemble(gmp: GeneralizedMomentProblem, r: int, schmudgen=False) -> ConicProgram:
    """Compile the problem at order r into a standard-form conic program."""
    return _assemble(gmp, r, schmudgen=schmudgen).program


@dataclass
class RelaxationResult:
    order: int
    rho: float
    sequences: dict            # vid -> TruncatedMomentSequence, scaled coords
    status: str
    residuals: dict            # max_equality_violation, min_psd_eigenvalue
    report: object
    wall_time: float
    transforms: dict           # vid -> AffineMap back to natural coordinates

    def natural_sequence(self, vid) -> TruncatedMomentSequence:
        amap = self.transforms[vid]
        seq = self.sequences[vid]
        if amap.is_identity():
            return seq
        return seq.pushforward_affine(amap.scale, amap.offset)

    def to_json_dict(self):
        return {
            "order": self.order,
            "rho": self.rho,
            "status": self.status,
            "residuals": self.residuals,
            "solver": self.report.as_dict() if self.report is not None else None,
        }


def _solve_assembly(asm: Assembly, options=None) -> RelaxationResult:
    options = dict(options or {})
    tol = options.setdefault("tol", 1e-8)
    t0 = time.perf_counter()
    z, report = conic.solve(asm.program, **options)
    wall = time.perf_counter() - t0
    gmp = asm.gmp
    transforms = {v.vid: v.support.transform for v in gmp.variables}
    if report.status in (STATUS_INFEASIBLE, STATUS_FAILURE):
        return RelaxationResult(asm.r, math.nan, {}, report.status,
                                {"max_equality_violation": math.inf,
                                 "min_psd_eigenvalue": -math.inf},
                                report, wall, transforms)
    seqs = asm.extract(z)
    max_eq = 0.0
    for v in gmp.variables:
        mode, value = gmp.masses[v.vid]
        if mode == "eq":
            max_eq = max(max_eq, abs(seqs[v.vid].mass - value))
    for lin, rhs in gmp.constraints:
        if lin.max_degree() > 2 * asm.r:
            continue
        max_eq = max(max_eq, abs(lin.value(seqs) - rhs))
    min_eig = math.inf
    rel_eig = 0.0
    for vid, label, g, br in asm.block_meta:
        mat = localizing_matrix(seqs[vid], g, br)
        lam = mat.min_eigenvalue()
        min_eig = min(min_eig, lam)
        scale = max(1.0, float(np.linalg.norm(mat.entries, "fro")))
        rel_eig = max(rel_eig, max(0.0, -lam) / scale)
    status = report.status
    if status == STATUS_OPTIMAL and (max_eq > 10 * tol or rel_eig > 10 * tol):
        status = STATUS_NEAR
    return RelaxationResult(asm.r, report.primal_objective, seqs, status,
                            {"max_equality_violation": max_eq,
                             "min_psd_eigenvalue": min_eig},
                            report, wall, transforms)


def solve_order(gmp: GeneralizedMomentProblem, r: int, options=None,
                schmudgen=False) -> RelaxationResult:
    """Assemble and solve the relaxation of order r."""
    asm = _assemble(gmp, r, schmudgen=schmudgen)
    return _solve_assembly(asm, options)


def hierarchy(gmp: GeneralizedMomentProblem, r_min: int, r_max: int,
              options=None, schmudgen=False):
    """Solve orders r_min..r_max; failures are recorded, the sweep continues."""
    if r_min > r_max:
        raise ValueError("empty order range")
    RelaxationOrder(r_min, min_order(gmp))
    results = []
    for r in range(r_min, r_max + 1):
        try:
            results.append(solve_order(gmp, r, options, schmudgen=schmudgen))
        except SolverFailure as exc:
            results.append(RelaxationResult(
                r, math.nan, {}, STATUS_FAILURE,
                {"max_equality_violation": math.inf,
                 "min_psd_eigenvalue": -math.inf},
                exc.report, 0.0,
                {v.vid: v.support.transform for v in gmp.variables}))
    return results


def monotone_flags(results, slack=1e-7):
    """flags[i] is False when rho_{r_i} drops below rho_{r_{i-1}} - slack."""
    flags = []
    prev = -math.inf
    for res in results:
        if math.isnan(res.rho):
            flags.append(False)
            continue
        flags.append(res.rho >= prev - slack)
        prev = max(prev, res.rho)
    return flags
