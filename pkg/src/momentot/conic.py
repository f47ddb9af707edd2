"""Minimal conic-program carrier, embedded solve, and SDPA sparse export.

Standard form:

    minimize    c . z
    subject to  A z = b
                z in K = block_1 x block_2 x ... (ordered cone layout)

where each block is tagged Free(count), Nonneg(count) or Psd(size); a
Psd(m) block occupies m*(m+1)/2 entries of z, packed over the upper
triangle in row-major order ((0,0), (0,1), ..., (0,m-1), (1,1), ...).
An entry z_e with e = (i, j), i < j, holds the off-diagonal matrix value
once (not scaled by sqrt(2)).

solve() runs a presolve (duplicate-row removal, fixed variables from
singleton rows, slack elimination from singleton columns) and hands the
reduced problem to the primal-dual interior-point method of
cvxopt.solvers.conelp; the reported contract is the residual triple
(equality, cone membership, duality gap) recomputed on the original
program.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

STATUS_OPTIMAL = "optimal"
STATUS_NEAR = "near-optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_FAILURE = "solver-failure"


class SolverFailure(RuntimeError):
    """Raised when a solve cannot produce a usable point."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class ConeBlock:
    kind: str          # "free" | "nonneg" | "psd"
    size: int          # count for free/nonneg, matrix side for psd

    def __post_init__(self):
        if self.kind not in ("free", "nonneg", "psd"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("block size must be >= 1")

    @property
    def length(self):
        """Number of z entries the block occupies."""
        if self.kind == "psd":
            return self.size * (self.size + 1) // 2
        return self.size


def psd_pack_indices(m):
    """(i, j) pairs of the packed upper triangle, row-major."""
    return [(i, j) for i in range(m) for j in range(i, m)]


def packed_to_matrix(vec, m):
    out = np.empty((m, m))
    k = 0
    for i in range(m):
        for j in range(i, m):
            out[i, j] = vec[k]
            out[j, i] = vec[k]
            k += 1
    return out


@dataclass
class SolveReport:
    status: str
    primal_objective: float
    dual_objective: float
    gap: float
    primal_residual: float
    dual_residual: float
    cone_residual: float
    iterations: int

    def as_dict(self):
        return {
            "status": self.status,
            "primal_objective": self.primal_objective,
            "dual_objective": self.dual_objective,
            "gap": self.gap,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "cone_residual": self.cone_residual,
            "iterations": self.iterations,
        }


class ConicProgram:
    """Immutable standard-form conic program with named entries."""

    __slots__ = ("blocks", "c", "A", "b", "names")

    def __init__(self, blocks, c, A, b, names=None):
        self.blocks = tuple(blocks)
        n = sum(bl.length for bl in self.blocks)
        self.c = np.asarray(c, dtype=float)
        if self.c.shape != (n,):
            raise ValueError(f"objective length {self.c.shape} != layout length {n}")
        A = sp.csr_matrix(A, dtype=float) if not sp.issparse(A) else A.tocsr().astype(float)
        self.A = A
        self.b = np.asarray(b, dtype=float)
        if A.shape[1] != n:
            raise ValueError(f"A has {A.shape[1]} columns, layout implies {n}")
        if self.b.shape != (A.shape[0],):
            raise ValueError("b length mismatch")
        if not np.all(np.isfinite(self.b)):
            raise ValueError("b must be finite")
        self.names = tuple(names) if names is not None else None
        if self.names is not None and len(self.names) != n:
            raise ValueError("name map length mismatch")

    @property
    def n(self):
        return self.c.shape[0]

    @property
    def m(self):
        return self.A.shape[0]

    def block_offsets(self):
        out = []
        acc = 0
        for bl in self.blocks:
            out.append(acc)
            acc += bl.length
        return out

    def with_objective(self, c):
        return ConicProgram(self.blocks, c, self.A, self.b, self.names)

    def cone_violation(self, z):
        """Worst relative cone-membership violation of z."""
        worst = 0.0
        for off, bl in zip(self.block_offsets(), self.blocks):
            part = z[off:off + bl.length]
            if bl.kind == "nonneg":
                scale = max(1.0, float(np.abs(part).max(initial=0.0)))
                worst = max(worst, float(-part.min(initial=0.0)) / scale)
            elif bl.kind == "psd":
                mat = packed_to_matrix(part, bl.size)
                scale = max(1.0, float(np.linalg.norm(mat, "fro")))
                lam = float(np.linalg.eigvalsh(mat)[0])
                worst = max(worst, max(0.0, -lam) / scale)
        return worst

    def equality_residual(self, z):
        r = self.A @ z - self.b
        return float(np.linalg.norm(r) / max(1.0, np.linalg.norm(self.b)))

    def serialize(self) -> bytes:
        """Canonical byte serialization (used for determinism checks)."""
        buf = io.StringIO()
        buf.write(";".join(f"{bl.kind}:{bl.size}" for bl in self.blocks))
        buf.write("\n")
        buf.write(",".join(repr(v) for v in self.c))
        buf.write("\n")
        coo = self.A.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            buf.write(f"{coo.row[k]} {coo.col[k]} {coo.data[k]!r}\n")
        buf.write(",".join(repr(v) for v in self.b))
        return buf.getvalue().encode()


# ---------------------------------------------------------------------------
# presolve
# ---------------------------------------------------------------------------

@dataclass
class _Reduced:
    keep: np.ndarray           # indices of retained variables
    fixed: dict                # var index -> value
    rows_kept: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    offset: float
    slack_rows: list           # (block_id, local_entry, row_coeffs, const) images
    retained_cone: list        # (block_id, local_entry, var index)
    infeasible: bool = False


def _presolve(prog: ConicProgram, feastol):
    """Remove duplicate rows, fix variables from singleton rows, and turn
    cone entries whose column appears in exactly one row into affine images.
    """
    A = prog.A.tocsr()
    b = prog.b.copy()
    n = prog.n
    m = prog.m

    kind = np.empty(n, dtype=object)
    block_id = np.empty(n, dtype=np.int64)
    local = np.empty(n, dtype=np.int64)
    for bi, (off, bl) in enumerate(zip(prog.block_offsets(), prog.blocks)):
        kind[off:off + bl.length] = bl.kind
        block_id[off:off + bl.length] = bi
        local[off:off + bl.length] = np.arange(bl.length)

    # -- drop exactly duplicated rows -----------------------------------
    seen = {}
    row_alive = np.ones(m, dtype=bool)
    indptr, indices, data = A.indptr, A.indices, A.data
    for r in range(m):
        sl = slice(indptr[r], indptr[r + 1])
        key = (tuple(indices[sl]), tuple(data[sl]), float(b[r]))
        if key in seen:
            row_alive[r] = False
        else:
            seen[key] = r

    # -- fixed variables from singleton rows (free vars only) ------------
    fixed = {}
    col_csc = A.tocsc()
    changed = True
    b_work = b.copy()
    # row supports are updated lazily through the fixed set
    while changed:
        changed = False
        for r in range(m):
            if not row_alive[r]:
                continue
            sl = slice(indptr[r], indptr[r + 1])
            cols = [c for c in indices[sl] if c not in fixed]
            if len(cols) == 0:
                if abs(b_work[r] - sum(data[k] * fixed[indices[k]]
                                       for k in range(sl.start, sl.stop)
                                       if indices[k] in fixed)) > max(feastol, 1e-9):
                    red = _Reduced(np.array([]), fixed, np.array([]), None, None,
                                   None, 0.0, [], [], infeasible=True)
                    return red
                row_alive[r] = False
                changed = True
                continue
            if len(cols) == 1 and kind[cols[0]] == "free":
                j = cols[0]
                coef = 0.0
                rhs = b_work[r]
                for k in range(sl.start, sl.stop):
                    cc = indices[k]
                    if cc == j:
                        coef = data[k]
                    elif cc in fixed:
                        rhs -= data[k] * fixed[cc]
                if coef == 0.0:
                    continue
                fixed[j] = rhs / coef
                row_alive[r] = False
                changed = True

    # -- classify remaining columns --------------------------------------
    alive_rows = np.where(row_alive)[0]
    # count appearances of each column among alive rows
    col_count = np.zeros(n, dtype=np.int64)
    for r in alive_rows:
        sl = slice(indptr[r], indptr[r + 1])
        for k in range(sl.start, sl.stop):
            if indices[k] not in fixed:
                col_count[indices[k]] += 1

    eliminate = {}      # cone var index -> defining row
    used_rows = set()
    for r in alive_rows:
        sl = slice(indptr[r], indptr[r + 1])
        # prefer eliminating via a cone entry with unit coefficient
        for k in range(sl.start, sl.stop):
            j = indices[k]
            if (j not in fixed and kind[j] != "free" and col_count[j] == 1
                    and prog.c[j] == 0.0 and data[k] != 0.0 and r not in used_rows
                    and j not in eliminate):
                eliminate[j] = (r, data[k])
                used_rows.add(r)
                break

    keep_mask = np.ones(n, dtype=bool)
    for j in fixed:
        keep_mask[j] = False
    for j in eliminate:
        keep_mask[j] = False
    keep = np.where(keep_mask)[0]
    pos_of = {int(j): i for i, j in enumerate(keep)}

    # -- build reduced rows and slack images ------------------------------
    slack_rows = []
    retained_cone = []
    red_rows = []
    red_b = []
    rows_kept = []
    for r in alive_rows:
        if r in used_rows:
            continue
        sl = slice(indptr[r], indptr[r + 1])
        coeffs = {}
        rhs = b_work[r]
        for k in range(sl.start, sl.stop):
            j = int(indices[k])
            v = data[k]
            if j in fixed:
                rhs -= v * fixed[j]
            else:
                coeffs[j] = coeffs.get(j, 0.0) + v
        coeffs = {j: v for j, v in coeffs.items() if v != 0.0}
        if not coeffs:
            if abs(rhs) > max(feastol, 1e-9):
                return _Reduced(np.array([]), fixed, np.array([]), None, None,
                                None, 0.0, [], [], infeasible=True)
            continue
        red_rows.append(coeffs)
        red_b.append(rhs)
        rows_kept.append(r)

    for j, (r, coef) in sorted(eliminate.items()):
        sl = slice(indptr[r], indptr[r + 1])
        coeffs = {}
        const = b_work[r]
        for k in range(sl.start, sl.stop):
            cc = int(indices[k])
            v = data[k]
            if cc == j:
                continue
            if cc in fixed:
                const -= v * fixed[cc]
            else:
                coeffs[pos_of[cc]] = coeffs.get(pos_of[cc], 0.0) - v / coef
        slack_rows.append((int(block_id[j]), int(local[j]), coeffs, const / coef))

    for j in keep:
        if kind[j] != "free":
            retained_cone.append((int(block_id[j]), int(local[j]), pos_of[int(j)]))

    n_red = len(keep)
    if red_rows:
        rows_i, cols_i, vals = [], [], []
        for i, coeffs in enumerate(red_rows):
            for j, v in coeffs.items():
                rows_i.append(i)
                cols_i.append(pos_of[j])
                vals.append(v)
        A_red = sp.csr_matrix((vals, (rows_i, cols_i)), shape=(len(red_rows), n_red))
    else:
        A_red = sp.csr_matrix((0, n_red))
    c_red = prog.c[keep]
    offset = sum(prog.c[j] * v for j, v in fixed.items())
    # objective weight of eliminated cone entries folds into retained vars
    for (bi, le, coeffs, const), (j, _) in zip(slack_rows, sorted(eliminate.items())):
        cj = prog.c[j]
        if cj != 0.0:
            offset += cj * const
            for col, v in coeffs.items():
                c_red[col] += cj * v
    return _Reduced(keep, fixed, np.array(rows_kept), A_red,
                    np.array(red_b), c_red, offset, slack_rows, retained_cone)


def _drop_dependent_rows(A, b, tol):
    """Keep a maximal independent row subset; checks the dropped rows are
    consistent with the kept ones.  Returns (A', b', consistent)."""
    import scipy.linalg

    dense = A.toarray()
    m = dense.shape[0]
    _, rmat, piv = scipy.linalg.qr(dense.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rmat)) if rmat.size else np.zeros(0)
    if diag.size == 0:
        return A, b, bool(np.all(np.abs(b) <= max(tol, 1e-9)))
    thresh = diag.max() * max(dense.shape) * np.finfo(float).eps * 100
    rank = int((diag > thresh).sum())
    if rank == m:
        return A, b, True
    keep = np.sort(piv[:rank])
    drop = np.sort(piv[rank:])
    lam, *_ = np.linalg.lstsq(dense[keep].T, dense[drop].T, rcond=None)
    predicted = lam.T @ b[keep]
    ok = bool(np.all(np.abs(predicted - b[drop]) <= max(100 * tol, 1e-7)))
    return sp.csr_matrix(dense[keep]), b[keep], ok


def solve(program: ConicProgram, tol=1e-8, max_iter=100, scale=True, verbose=0):
    """Solve the program; returns (z, SolveReport).

    Residual contract on optimal status: relative equality residual,
    relative cone violation, and relative duality gap all <= 10*tol.
    """
    from cvxopt import matrix as cvx_matrix
    from cvxopt import solvers as cvx_solvers
    from cvxopt import spmatrix as cvx_spmatrix

    red = _presolve(program, feastol=tol * 10)
    if red.infeasible:
        report = SolveReport(STATUS_INFEASIBLE, math.nan, math.nan, math.inf,
                             math.inf, math.inf, math.inf, 0)
        return np.full(program.n, np.nan), report

    n_red = len(red.keep)
    # cone rows for conelp: nonneg first, then full psd blocks
    lin_entries = []      # (coeffs dict, const)
    psd_blocks = {}       # block id -> size
    psd_entries = {}      # (block id) -> {(i, j): (coeffs, const)}
    for bi, bl in enumerate(program.blocks):
        if bl.kind == "psd":
            psd_blocks[bi] = bl.size
            psd_entries[bi] = {}

    def add_entry(bi, le, coeffs, const):
        bl = program.blocks[bi]
        if bl.kind == "nonneg":
            lin_entries.append((coeffs, const))
        else:
            pairs = psd_pack_indices(bl.size)
            psd_entries[bi][pairs[le]] = (coeffs, const)

    for bi, le, coeffs, const in red.slack_rows:
        add_entry(bi, le, coeffs, const)
    for bi, le, col in red.retained_cone:
        add_entry(bi, le, {col: 1.0}, 0.0)

    # every psd entry must be defined (either image or retained variable)
    for bi, size in psd_blocks.items():
        want = set(psd_pack_indices(size))
        have = set(psd_entries[bi])
        if have and have != want:
            raise ValueError("psd block is only partially constrained")
    psd_order = [bi for bi in sorted(psd_blocks) if psd_entries[bi]]

    dims = {"l": len(lin_entries), "q": [],
            "s": [psd_blocks[bi] for bi in psd_order]}
    g_rows = []
    h_vals = []

    def emit(coeffs, const):
        g_rows.append(coeffs)
        h_vals.append(const)

    for coeffs, const in lin_entries:
        emit(coeffs, const)
    for bi in psd_order:
        size = psd_blocks[bi]
        entries = psd_entries[bi]
        for col in range(size):           # column-major full matrix
            for row in range(size):
                key = (min(row, col), max(row, col))
                emit(*entries[key])

    # h - Gx = s  =>  G = -coeffs, h = const
    gi, gj, gv = [], [], []
    for r, coeffs in enumerate(g_rows):
        for j, v in coeffs.items():
            gi.append(r)
            gj.append(j)
            gv.append(-v)
    n_g = len(g_rows)
    if n_red == 0:
        # everything fixed; just evaluate
        z = _reconstruct(program, red, np.zeros(0))
        return _finalize(program, red, z, None, tol)

    A_red, b_red, c_red = red.A.tocsr(copy=True), red.b.copy(), red.c.copy()
    if A_red.shape[0] > 0:
        A_red, b_red, consistent = _drop_dependent_rows(A_red, b_red, tol)
        if not consistent:
            report = SolveReport(STATUS_INFEASIBLE, math.nan, math.nan, math.inf,
                                 math.inf, math.inf, math.inf, 0)
            return np.full(program.n, np.nan), report
    dc = np.ones(n_red)
    if scale:
        # Ruiz-style passes: equality rows by their max entry, columns by
        # their max entry over the equality system and the cone images
        # jointly (column scaling rescales the decision variables, which
        # leaves cone membership intact; rows of G are never scaled).
        gv_arr = np.asarray(gv)
        gj_arr = np.asarray(gj, dtype=int) if gj else np.zeros(0, dtype=int)
        for _ in range(2):
            if A_red.shape[0] > 0 and A_red.nnz > 0:
                row_norm = np.asarray(abs(A_red).max(axis=1).todense()).ravel()
                row_norm[row_norm == 0] = 1.0
                s = 1.0 / np.sqrt(row_norm)
                A_red = sp.diags(s) @ A_red
                b_red = b_red * s
            col_norm = np.zeros(n_red)
            if A_red.nnz > 0:
                col_norm = np.asarray(abs(A_red).max(axis=0).todense()).ravel()
            if gv_arr.size:
                np.maximum.at(col_norm, gj_arr, np.abs(gv_arr))
            col_norm[col_norm == 0] = 1.0
            t = 1.0 / np.sqrt(col_norm)
            A_red = A_red @ sp.diags(t)
            if gv_arr.size:
                gv_arr = gv_arr * t[gj_arr]
            c_red = c_red * t
            dc = dc * t
        gv = list(gv_arr)

    G = cvx_spmatrix(gv, gi, gj, size=(n_g, n_red)) if gv else \
        cvx_spmatrix([], [], [], size=(n_g, n_red))
    h = cvx_matrix(np.asarray(h_vals))
    c_cvx = cvx_matrix(c_red)
    if A_red.shape[0] > 0:
        coo = A_red.tocoo()
        A_cvx = cvx_spmatrix(coo.data, coo.row.tolist(), coo.col.tolist(),
                             size=A_red.shape)
        b_cvx = cvx_matrix(b_red)
    else:
        A_cvx = cvx_spmatrix([], [], [], size=(0, n_red))
        b_cvx = cvx_matrix(np.zeros(0))

    old_options = dict(cvx_solvers.options)
    cvx_solvers.options.update({
        "show_progress": bool(verbose),
        "maxiters": int(max_iter),
        "abstol": tol,
        "reltol": tol,
        "feastol": min(1e-8, tol * 10),
        "refinement": 2,
    })
    try:
        sol = cvx_solvers.conelp(c_cvx, G, h, dims, A=A_cvx, b=b_cvx)
    except (ValueError, ArithmeticError, ZeroDivisionError) as exc:
        report = SolveReport(STATUS_FAILURE, math.nan, math.nan, math.inf,
                             math.inf, math.inf, math.inf, 0)
        raise SolverFailure(f"interior-point solve failed: {exc}", report) from exc
    finally:
        cvx_solvers.options.clear()
        cvx_solvers.options.update(old_options)

    if sol["x"] is None:
        status = STATUS_INFEASIBLE if "infeasible" in sol["status"] else STATUS_FAILURE
        report = SolveReport(status, math.nan, math.nan, math.inf,
                             math.inf, math.inf, math.inf,
                             int(sol.get("iterations", 0)))
        return np.full(program.n, np.nan), report

    x_red = np.asarray(sol["x"]).ravel()
    if scale:
        x_red = x_red * dc
    z = _reconstruct(program, red, x_red)
    return _finalize(program, red, z, sol, tol)


def _reconstruct(program, red, x_red):
    z = np.zeros(program.n)
    for j, v in red.fixed.items():
        z[j] = v
    for i, j in enumerate(red.keep):
        z[j] = x_red[i]
    offsets = program.block_offsets()
    for bi, le, coeffs, const in red.slack_rows:
        val = const + sum(x_red[c] * v for c, v in coeffs.items())
        z[offsets[bi] + le] = val
    return z


def _finalize(program, red, z, sol, tol):
    pobj = float(program.c @ z)
    eq = program.equality_residual(z)
    cone = program.cone_violation(z)
    if sol is None:
        gap = 0.0
        dobj = pobj
        dres = 0.0
        iters = 0
        raw = "optimal"
    else:
        dobj = sol["dual objective"]
        dobj = float(dobj) + red.offset if dobj is not None else math.nan
        gap_abs = sol.get("gap")
        gap = (float(gap_abs) / max(1.0, abs(pobj))) if gap_abs is not None else math.inf
        dres = float(sol.get("dual infeasibility") or 0.0)
        iters = int(sol.get("iterations", 0))
        raw = sol["status"]
    ok = max(eq, cone, gap) <= 10 * tol
    near = max(eq, cone, gap) <= 1e-4
    if raw == "optimal" and ok:
        status = STATUS_OPTIMAL
    elif near:
        status = STATUS_NEAR
    elif raw in ("primal infeasible", "dual infeasible"):
        status = STATUS_INFEASIBLE
    else:
        status = STATUS_FAILURE
    report = SolveReport(status, pobj, dobj, gap, eq, dres, cone, iters)
    return z, report


# ---------------------------------------------------------------------------
# SDPA sparse export
# ---------------------------------------------------------------------------
# The program is written on the dual side of the SDPA pairing: the file's
# matrix variable Y is our z arranged block-diagonally, the file's m
# constraints <F_i, Y> = a_i are our equality rows (a = b, F_i = A row i),
# and F_0 = -c so that the file's dual optimum equals -(our minimum).
# Free entries of z are split into u - v pairs carried by one trailing
# diagonal block of size 2*(free count); a layout comment line makes the
# encoding self-describing.  All floats use 17 significant digits so the
# round trip is bit exact.

def _fmt(v: float) -> str:
    return f"{v:.17g}"


def export_sdpa(program: ConicProgram, destination=None) -> str:
    free_cols = []
    offsets = program.block_offsets()
    for off, bl in zip(offsets, program.blocks):
        if bl.kind == "free":
            free_cols.extend(range(off, off + bl.length))
    free_pos = {j: k for k, j in enumerate(free_cols)}

    sdpa_blocks = []   # (tag, size_str, block id or "free")
    col_map = {}       # z column -> (sdpa block number, i, j, factor)
    blk_no = 0
    for off, bl in zip(offsets, program.blocks):
        if bl.kind == "free":
            continue
        blk_no += 1
        if bl.kind == "nonneg":
            sdpa_blocks.append(str(-bl.size))
            for k in range(bl.size):
                col_map[off + k] = (blk_no, k + 1, k + 1, 1.0)
        else:
            sdpa_blocks.append(str(bl.size))
            for k, (i, j) in enumerate(psd_pack_indices(bl.size)):
                factor = 1.0 if i == j else 0.5
                col_map[off + k] = (blk_no, i + 1, j + 1, factor)
    if free_cols:
        blk_no += 1
        sdpa_blocks.append(str(-2 * len(free_cols)))

    def entries_for(vector):
        """(block, i, j, value) list for one constraint matrix."""
        out = []
        for j in np.nonzero(vector)[0]:
            v = float(vector[j])
            if j in col_map:
                blk, bi, bj, factor = col_map[j]
                out.append((blk, bi, bj, v * factor))
            else:
                k = free_pos[int(j)]
                out.append((blk_no, k + 1, k + 1, v))
                out.append((blk_no, len(free_cols) + k + 1,
                            len(free_cols) + k + 1, -v))
        return out

    lines = []
    layout = ";".join(f"{bl.kind}:{bl.size}" for bl in program.blocks)
    lines.append(f'"momentot layout {layout}')
    lines.append(str(program.m))
    lines.append(str(len(sdpa_blocks)))
    lines.append(" ".join(sdpa_blocks) if sdpa_blocks else "0")
    lines.append(" ".join(_fmt(v) for v in program.b))
    for blk, bi, bj, v in entries_for(-program.c):
        if v != 0.0:
            lines.append(f"0 {blk} {bi} {bj} {_fmt(v)}")
    dense_rows = program.A.toarray() if program.m else np.zeros((0, program.n))
    for r in range(program.m):
        for blk, bi, bj, v in entries_for(dense_rows[r]):
            if v != 0.0:
                lines.append(f"{r + 1} {blk} {bi} {bj} {_fmt(v)}")
    text = "\n".join(lines) + "\n"
    if destination is not None:
        with open(destination, "w") as fh:
            fh.write(text)
    return text
