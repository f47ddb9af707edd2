"""Truncated moment sequences, the Riesz functional, moment/localizing
matrices, and moment computation for measure descriptors.

Sequences store their values densely over the graded-lex index list, which
makes Hankel-type matrix assembly an O(1)-per-entry lookup; the dict view
is the canonical API surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .polyalg import (AffineMap, Polynomial, SemialgebraicSet,
                      ProductStructure, basis_size, enumerate_indices,
                      index_positions)


class DegreeOverflowError(ValueError):
    """A requested moment exceeds the stored truncation order."""


class TruncatedMomentSequence:
    """Moments y_alpha for |alpha| <= order of one measure variable."""

    __slots__ = ("dimension", "order", "array", "probability")

    def __init__(self, dimension, order, array, probability=False):
        self.dimension = int(dimension)
        self.order = int(order)
        array = np.asarray(array, dtype=float)
        expected = basis_size(self.dimension, self.order)
        if array.shape != (expected,):
            raise ValueError(f"expected {expected} values, got {array.shape}")
        self.array = array
        self.probability = bool(probability)
        if probability and abs(array[0] - 1.0) > 1e-12:
            raise ValueError(f"probability-normalized sequence has y_0 = {array[0]}")

    # -- constructors ---------------------------------------------------
    @classmethod
    def from_dict(cls, dimension, order, values, probability=False):
        arr = np.zeros(basis_size(dimension, order))
        pos = index_positions(dimension, order)
        for alpha, v in values.items():
            alpha = tuple(alpha)
            if sum(alpha) > order:
                raise DegreeOverflowError(f"index {alpha} exceeds order {order}")
            arr[pos[alpha]] = v
        return cls(dimension, order, arr, probability)

    @classmethod
    def from_function(cls, dimension, order, fn, probability=False):
        idx = enumerate_indices(dimension, order)
        return cls(dimension, order,
                   np.array([fn(a) for a in idx]), probability)

    # -- access -----------------------------------------------------------
    def __getitem__(self, alpha):
        alpha = tuple(alpha)
        if len(alpha) != self.dimension:
            raise ValueError("index dimension mismatch")
        if sum(alpha) > self.order:
            raise DegreeOverflowError(
                f"moment {alpha} of degree {sum(alpha)} exceeds order {self.order}")
        return float(self.array[index_positions(self.dimension, self.order)[alpha]])

    def as_dict(self):
        idx = enumerate_indices(self.dimension, self.order)
        return {a: float(v) for a, v in zip(idx, self.array)}

    @property
    def mass(self):
        return float(self.array[0])

    def restrict(self, order):
        """Copy truncated to a lower order."""
        if order > self.order:
            raise DegreeOverflowError("cannot raise truncation order")
        k = basis_size(self.dimension, order)
        return TruncatedMomentSequence(self.dimension, order,
                                       self.array[:k].copy(), self.probability)

    def tensor(self, other, order=None):
        """Moments of the product measure, m_(a,b) = m_a * m_b."""
        order = min(self.order, other.order) if order is None else order
        if order > self.order or order > other.order:
            raise DegreeOverflowError("tensor order exceeds factor orders")
        n = self.dimension + other.dimension
        pos_a = index_positions(self.dimension, self.order)
        pos_b = index_positions(other.dimension, other.order)
        idx = enumerate_indices(n, order)
        arr = np.empty(len(idx))
        for i, gamma in enumerate(idx):
            a, b = gamma[:self.dimension], gamma[self.dimension:]
            arr[i] = self.array[pos_a[a]] * other.array[pos_b[b]]
        return TruncatedMomentSequence(n, order, arr,
                                       self.probability and other.probability)

    def pushforward_affine(self, scale, offset):
        """Moments of the image measure under x -> scale*x + offset.

        This is an exact linear map on the stored values and preserves the
        truncation order.
        """
        n = self.dimension
        out = np.empty_like(self.array)
        for i, beta in enumerate(enumerate_indices(n, self.order)):
            mono = Polynomial(n, {beta: 1.0})
            out[i] = riesz(self, mono.affine_substitute(scale, offset))
        return TruncatedMomentSequence(n, self.order, out, self.probability)

    def __repr__(self):
        return (f"TruncatedMomentSequence(dim={self.dimension}, "
                f"order={self.order}, mass={self.mass:.6g})")


@dataclass(frozen=True)
class MomentMatrix:
    """Hankel-type matrix of a (localized) truncated moment sequence."""
    order: int
    basis: tuple
    entries: np.ndarray

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.entries)[0])


def riesz(y: TruncatedMomentSequence, g: Polynomial) -> float:
    """Apply the Riesz functional of y to the polynomial g."""
    if g.dimension != y.dimension:
        raise ValueError("dimension mismatch")
    pos = index_positions(y.dimension, y.order)
    total = 0.0
    for alpha, coef in g.terms.items():
        if sum(alpha) > y.order:
            raise DegreeOverflowError(
                f"term {alpha} exceeds stored order {y.order}")
        total += coef * y.array[pos[alpha]]
    return total


@lru_cache(maxsize=None)
def _pair_position_table(n, r, order):
    """pos[i, j] = graded-lex position of basis_r[i] + basis_r[j]."""
    basis = enumerate_indices(n, r)
    pos = index_positions(n, order)
    k = len(basis)
    table = np.empty((k, k), dtype=np.int64)
    for i, a in enumerate(basis):
        for j in range(i, k):
            b = basis[j]
            p = pos[tuple(x + y for x, y in zip(a, b))]
            table[i, j] = p
            table[j, i] = p
    return table


def moment_matrix(y: TruncatedMomentSequence, r: int) -> MomentMatrix:
    """Matrix M_r(y) with entries y_{alpha+beta} over the degree-r basis."""
    if 2 * r > y.order:
        raise DegreeOverflowError(f"moment matrix of order {r} needs order {2 * r}")
    table = _pair_position_table(y.dimension, r, y.order)
    return MomentMatrix(r, enumerate_indices(y.dimension, r), y.array[table])


def localizing_matrix(y: TruncatedMomentSequence, g: Polynomial, r: int) -> MomentMatrix:
    """Matrix M_r(g y) with entries sum_gamma c_gamma y_{alpha+beta+gamma}."""
    if g.dimension != y.dimension:
        raise ValueError("dimension mismatch")
    if 2 * r + g.total_degree > y.order:
        raise DegreeOverflowError(
            f"localizing matrix needs order {2 * r + g.total_degree}")
    basis = enumerate_indices(y.dimension, r)
    pos = index_positions(y.dimension, y.order)
    k = len(basis)
    out = np.zeros((k, k))
    for gamma, coef in g.terms.items():
        for i in range(k):
            a = basis[i]
            for j in range(i, k):
                b = basis[j]
                v = coef * y.array[pos[tuple(x + yy + z for x, yy, z in zip(a, b, gamma))]]
                out[i, j] += v
                if i != j:
                    out[j, i] += v
    return MomentMatrix(r, basis, out)


def embed_marginal_index(structure: ProductStructure, factor: int, beta) -> tuple:
    """Product-space index with beta placed in block `factor`, zeros elsewhere."""
    dims = structure.factor_dimensions
    if not 0 <= factor < len(dims):
        raise ValueError("factor index out of range")
    beta = tuple(beta)
    if len(beta) != dims[factor]:
        raise ValueError(
            f"index length {len(beta)} does not match factor dimension {dims[factor]}")
    out = []
    for i, d in enumerate(dims):
        out.extend(beta if i == factor else (0,) * d)
    return tuple(out)


# ---------------------------------------------------------------------------
# measure descriptors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Empirical:
    """Weighted point cloud; weights default to uniform."""
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (pts.shape[0],):
                raise ValueError("weights length mismatch")
            if np.any(w < 0):
                raise ValueError("weights must be nonnegative")
            s = w.sum()
            if s <= 0:
                raise ValueError("weights must have positive sum")
            object.__setattr__(self, "weights", w / s)

    @property
    def dimension(self):
        return self.points.shape[1]

    def effective_weights(self):
        n = self.points.shape[0]
        return self.weights if self.weights is not None else np.full(n, 1.0 / n)

    def rescaled(self, amap: AffineMap):
        return Empirical(amap.to_scaled(self.points), self.weights)


@dataclass(frozen=True)
class UniformMask:
    """Uniform measure on the active cells of a 2-D binary mask.

    mask[ix, iy] is nonzero when the cell
    [origin_x + ix*dx, origin_x + (ix+1)*dx] x [origin_y + iy*dy, ...]
    belongs to the support.
    """
    mask: np.ndarray
    origin: tuple = (0.0, 0.0)
    cell_size: tuple = None

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise ValueError("mask must be 2-D")
        m = m != 0
        if not m.any():
            raise ValueError("mask has no active cell")
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        if self.cell_size is None:
            cs = (1.0 / m.shape[0], 1.0 / m.shape[1])
        else:
            cs = tuple(float(v) for v in self.cell_size)
        if any(v <= 0 for v in cs):
            raise ValueError("cell sizes must be positive")
        object.__setattr__(self, "cell_size", cs)

    @property
    def dimension(self):
        return 2

    def rescaled(self, amap: AffineMap):
        if amap.dimension != 2:
            raise ValueError("mask is 2-D")
        origin = tuple((o - t) / s for o, t, s in
                       zip(self.origin, amap.offset, amap.scale))
        cell = tuple(c / s for c, s in zip(self.cell_size, amap.scale))
        return UniformMask(self.mask, origin, cell)


@dataclass(frozen=True)
class ClosedForm:
    """Product of named 1-D measures, one per coordinate.

    Supported factors: ("uniform", lo, hi), ("dirac", c),
    ("beta", a, b, lo, hi) for the Beta(a, b) law mapped onto [lo, hi].
    """
    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(tuple(f) for f in self.factors))
        for f in self.factors:
            if f[0] not in ("uniform", "dirac", "beta"):
                raise ValueError(f"unknown 1-D measure {f[0]!r}")

    @property
    def dimension(self):
        return len(self.factors)

    def rescaled(self, amap: AffineMap):
        out = []
        for f, s, t in zip(self.factors, amap.scale, amap.offset):
            kind = f[0]
            if kind == "uniform":
                out.append(("uniform", (f[1] - t) / s, (f[2] - t) / s))
            elif kind == "dirac":
                out.append(("dirac", (f[1] - t) / s))
            else:
                out.append(("beta", f[1], f[2], (f[3] - t) / s, (f[4] - t) / s))
        return ClosedForm(tuple(out))


def _moments_1d(factor, order):
    kind = factor[0]
    m = np.empty(order + 1)
    if kind == "uniform":
        lo, hi = factor[1], factor[2]
        for k in range(order + 1):
            m[k] = (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo))
    elif kind == "dirac":
        c = factor[1]
        for k in range(order + 1):
            m[k] = c ** k
    elif kind == "beta":
        a, b, lo, hi = factor[1], factor[2], factor[3], factor[4]
        base = np.empty(order + 1)
        base[0] = 1.0
        for k in range(1, order + 1):
            base[k] = base[k - 1] * (a + k - 1) / (a + b + k - 1)
        w = hi - lo
        for k in range(order + 1):
            m[k] = sum(math.comb(k, j) * lo ** (k - j) * w ** j * base[j]
                       for j in range(k + 1))
    return m


def _mask_axis_integrals(n_cells, origin, cell, order, nodes):
    """integrals[i, m] = integral of x^m over cell i along one axis."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    starts = origin + cell * np.arange(n_cells)
    # nodes mapped into each cell
    pts = starts[:, None] + (x[None, :] + 1.0) * (cell / 2.0)
    wts = w * (cell / 2.0)
    powers = pts[:, :, None] ** np.arange(order + 1)[None, None, :]
    return np.einsum("q,iqm->im", wts, powers)


def descriptor_moments(descriptor, set_: SemialgebraicSet, order: int,
                       validate=True) -> TruncatedMomentSequence:
    """Probability-normalized moments of a measure descriptor, natural coords.

    Empirical descriptors are summed exactly; masks use per-cell tensorized
    Gauss-Legendre quadrature with enough nodes to integrate monomials of
    total degree `order` exactly; closed forms multiply 1-D moments.
    """
    n = descriptor.dimension
    if set_ is not None and set_.dimension != n:
        raise ValueError("descriptor/set dimension mismatch")
    if order < 0:
        raise ValueError("order must be >= 0")
    idx = enumerate_indices(n, order)

    if isinstance(descriptor, Empirical):
        pts = descriptor.points
        if pts.shape[0] == 0:
            raise ValueError("empirical descriptor with no points")
        w = descriptor.effective_weights()
        if validate and set_ is not None:
            scaled = set_.transform.to_scaled(pts)
            for g in set_.inequalities:
                vals = np.array([g(p) for p in scaled])
                if vals.min() < -1e-7:
                    raise ValueError(
                        "empirical point falls outside the declared support set")
        arr = np.empty(len(idx))
        for i, alpha in enumerate(idx):
            mono = np.ones(pts.shape[0])
            for d, e in enumerate(alpha):
                if e:
                    mono *= pts[:, d] ** e
            arr[i] = float(np.dot(w, mono))
        return TruncatedMomentSequence(n, order, arr, probability=True)

    if isinstance(descriptor, UniformMask):
        nodes = order // 2 + 1
        mx = _mask_axis_integrals(descriptor.mask.shape[0], descriptor.origin[0],
                                  descriptor.cell_size[0], order, nodes)
        my = _mask_axis_integrals(descriptor.mask.shape[1], descriptor.origin[1],
                                  descriptor.cell_size[1], order, nodes)
        table = mx.T @ (descriptor.mask.astype(float) @ my)
        table = table / table[0, 0]
        arr = np.array([table[a[0], a[1]] for a in idx])
        return TruncatedMomentSequence(2, order, arr, probability=True)

    if isinstance(descriptor, ClosedForm):
        per_axis = [_moments_1d(f, order) for f in descriptor.factors]
        arr = np.empty(len(idx))
        for i, alpha in enumerate(idx):
            v = 1.0
            for d, e in enumerate(alpha):
                v *= per_axis[d][e]
            arr[i] = v
        return TruncatedMomentSequence(n, order, arr, probability=True)

    raise TypeError(f"unknown descriptor type {type(descriptor).__name__}")


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_moments_csv(seq: TruncatedMomentSequence, path):
    """CSV rows alpha_1,...,alpha_n,value in graded-lex order."""
    lines = []
    for alpha, v in zip(enumerate_indices(seq.dimension, seq.order), seq.array):
        lines.append(",".join([str(e) for e in alpha] + [repr(float(v))]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_moments_csv(path, probability=False) -> TruncatedMomentSequence:
    values = {}
    n = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if n is None:
                n = len(parts) - 1
                if n < 1:
                    raise ValueError("moment CSV needs at least two columns")
            alpha = tuple(int(p) for p in parts[:n])
            values[alpha] = float(parts[n])
    if not values:
        raise ValueError(f"no moments found in {path}")
    order = max(sum(a) for a in values)
    return TruncatedMomentSequence.from_dict(n, order, values, probability)


def read_points_csv(path, dimension=None, weighted=None) -> Empirical:
    """One point per row; optional trailing weight column.

    If `dimension` is given, rows with dimension+1 columns are treated as
    weighted; otherwise set weighted=True/False explicitly (default: all
    columns are coordinates).
    """
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(p) for p in line.split(",")])
    if not rows:
        raise ValueError(f"no points found in {path}")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("ragged point CSV")
    if dimension is not None:
        if width == dimension + 1:
            weighted = True
        elif width == dimension:
            weighted = False
        else:
            raise ValueError(f"expected {dimension} or {dimension + 1} columns")
    data = np.asarray(rows)
    if weighted:
        return Empirical(data[:, :-1], data[:, -1])
    return Empirical(data)


def read_mask(path) -> np.ndarray:
    """Binary mask from a PGM (P2/P5, nonzero = inside) or 0/1 CSV grid.

    Image rows run top-to-bottom; the returned array is indexed [ix, iy]
    with iy increasing upward, matching the cell convention of UniformMask.
    """
    path = str(path)
    if path.lower().endswith(".pgm"):
        img = _read_pgm(path)
        # img[row, col], row 0 at the top; flip to [ix, iy] with y upward
        return (img != 0).T[:, ::-1]
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([int(float(p)) for p in line.split(",")])
    if not rows:
        raise ValueError(f"no mask rows found in {path}")
    img = np.asarray(rows)
    return (img != 0).T[:, ::-1]


def _read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        # manual tokenizer so P5 binary payload is not consumed
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    magic = tokens[0].decode()
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == "P2":
        vals = data[i:].split()
        pix = np.array([int(v) for v in vals], dtype=int)
    elif magic == "P5":
        i += 1  # single whitespace after maxval
        if maxval < 256:
            pix = np.frombuffer(data[i:i + width * height], dtype=np.uint8).astype(int)
        else:
            pix = np.frombuffer(data[i:i + 2 * width * height],
                                dtype=">u2").astype(int)
    else:
        raise ValueError(f"unsupported PGM magic {magic!r}")
    if pix.size != width * height:
        raise ValueError("truncated PGM payload")
    return pix.reshape(height, width)


def write_pgm(mask: np.ndarray, path):
    """Write a boolean [ix, iy] mask as a P2 image (inside = 255)."""
    img = (np.asarray(mask) != 0).T[::-1, :]
    lines = ["P2", f"{img.shape[1]} {img.shape[0]}", "255"]
    for row in img:
        lines.append(" ".join("255" if v else "0" for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
