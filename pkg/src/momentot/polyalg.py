"""Sparse multivariate polynomial arithmetic, graded-lex monomial enumeration,
and compact basic semi-algebraic set descriptions.

Multi-indices are plain tuples of nonnegative ints.  The global monomial
order is graded lexicographic: indices are sorted by total degree first,
and within a degree block the first coordinate decreases, so for n=2 the
order starts (0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...  Every matrix
and file export in the package indexes rows and columns by this order.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

MultiIndex = tuple  # tuple[int, ...]


def degree(alpha) -> int:
    """Total degree |alpha| of a multi-index."""
    return sum(alpha)


def basis_size(n: int, r: int) -> int:
    """Number s(r) = C(n+r, r) of monomials of degree <= r in n variables."""
    return math.comb(n + r, r)


def _compositions(d, n):
    # exponent tuples of total degree d, first coordinate largest first
    if n == 1:
        yield (d,)
        return
    for k in range(d, -1, -1):
        for rest in _compositions(d - k, n - 1):
            yield (k,) + rest


@lru_cache(maxsize=None)
def enumerate_indices(n: int, r: int) -> tuple:
    """All multi-indices with |alpha| <= r in graded lexicographic order.

    Returns exactly basis_size(n, r) tuples; the order is deterministic.
    """
    if n < 1:
        raise ValueError("dimension must be >= 1")
    if r < 0:
        raise ValueError("max degree must be >= 0")
    out = []
    for d in range(r + 1):
        out.extend(_compositions(d, n))
    return tuple(out)


@lru_cache(maxsize=None)
def index_positions(n: int, r: int) -> dict:
    """Map multi-index -> position in enumerate_indices(n, r)."""
    return {a: i for i, a in enumerate(enumerate_indices(n, r))}


class Polynomial:
    """Sparse real polynomial: dict from exponent tuple to coefficient.

    Zero coefficients are never stored (pruning threshold is exactly 0).
    Instances are immutable by convention; arithmetic returns new objects.
    """

    __slots__ = ("dimension", "terms")

    def __init__(self, dimension: int, terms=None):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension
        clean = {}
        for alpha, coef in (terms or {}).items():
            alpha = tuple(int(e) for e in alpha)
            if len(alpha) != dimension:
                raise ValueError(
                    f"index {alpha} has length {len(alpha)}, expected {dimension}")
            if any(e < 0 for e in alpha):
                raise ValueError(f"negative exponent in {alpha}")
            c = float(coef)
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + c
                if clean[alpha] == 0.0:
                    del clean[alpha]
        self.terms = clean

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, dimension):
        return cls(dimension, {})

    @classmethod
    def constant(cls, dimension, value):
        return cls(dimension, {(0,) * dimension: value})

    @classmethod
    def variable(cls, dimension, i, power=1):
        if not 0 <= i < dimension:
            raise ValueError(f"variable index {i} out of range")
        alpha = [0] * dimension
        alpha[i] = power
        return cls(dimension, {tuple(alpha): 1.0})

    # -- basic queries ------------------------------------------------
    @property
    def total_degree(self) -> int:
        """Max term degree; 0 for the zero polynomial by convention."""
        return max((sum(a) for a in self.terms), default=0)

    def coefficient(self, alpha) -> float:
        return self.terms.get(tuple(alpha), 0.0)

    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        return (isinstance(other, Polynomial)
                and self.dimension == other.dimension
                and self.terms == other.terms)

    def __hash__(self):
        return hash((self.dimension, frozenset(self.terms.items())))

    # -- arithmetic ---------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Polynomial):
            if other.dimension != self.dimension:
                raise ValueError(
                    f"dimension mismatch: {self.dimension} vs {other.dimension}")
            return other
        return Polynomial.constant(self.dimension, other)

    def __add__(self, other):
        other = self._coerce(other)
        terms = dict(self.terms)
        for a, c in other.terms.items():
            terms[a] = terms.get(a, 0.0) + c
        return Polynomial(self.dimension, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.dimension, {a: -c for a, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial(self.dimension,
                              {a: c * other for a, c in self.terms.items()})
        other = self._coerce(other)
        prod = {}
        for a, ca in self.terms.items():
            for b, cb in other.terms.items():
                ab = tuple(x + y for x, y in zip(a, b))
                prod[ab] = prod.get(ab, 0.0) + ca * cb
        return Polynomial(self.dimension, prod)

    __rmul__ = __mul__

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise ValueError("power must be a nonnegative integer")
        result = Polynomial.constant(self.dimension, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base if k > 1 else base
            k >>= 1
        return result

    def __call__(self, point):
        total = 0.0
        for alpha, coef in self.terms.items():
            v = coef
            for x, e in zip(point, alpha):
                if e:
                    v *= x ** e
            total += v
        return total

    # -- structural maps ----------------------------------------------
    def embed(self, total_dimension: int, offset: int) -> "Polynomial":
        """View this polynomial in a larger space, variables shifted by offset."""
        if offset < 0 or offset + self.dimension > total_dimension:
            raise ValueError("embedding block out of range")
        pad_l = (0,) * offset
        pad_r = (0,) * (total_dimension - offset - self.dimension)
        return Polynomial(total_dimension,
                          {pad_l + a + pad_r: c for a, c in self.terms.items()})

    def map_variables(self, total_dimension: int, targets) -> "Polynomial":
        """Re-home variable i to coordinate targets[i] of a larger space."""
        targets = list(targets)
        if len(targets) != self.dimension:
            raise ValueError("need one target per variable")
        if len(set(targets)) != len(targets):
            raise ValueError("targets must be distinct")
        if any(not 0 <= t < total_dimension for t in targets):
            raise ValueError("target out of range")
        out = {}
        for alpha, coef in self.terms.items():
            beta = [0] * total_dimension
            for i, e in enumerate(alpha):
                beta[targets[i]] = e
            out[tuple(beta)] = coef
        return Polynomial(total_dimension, out)

    def affine_substitute(self, scale, offset) -> "Polynomial":
        """Substitute x_i = scale[i]*u_i + offset[i]; returns polynomial in u."""
        n = self.dimension
        scale = list(scale)
        offset = list(offset)
        if len(scale) != n or len(offset) != n:
            raise ValueError("scale/offset length mismatch")
        result = Polynomial.zero(n)
        for alpha, coef in self.terms.items():
            term = Polynomial.constant(n, coef)
            for i, e in enumerate(alpha):
                if e == 0:
                    continue
                lin = Polynomial(n, {_unit(n, i): scale[i]})
                if offset[i] != 0.0:
                    lin = lin + offset[i]
                term = term * lin ** e
            result = result + term
        return result

    def normalized(self) -> "Polynomial":
        """Scale so the largest absolute coefficient is 1 (sign preserved)."""
        if not self.terms:
            return self
        m = max(abs(c) for c in self.terms.values())
        return Polynomial(self.dimension, {a: c / m for a, c in self.terms.items()})

    def __repr__(self):
        return f"Polynomial({self.dimension}, {format_polynomial(self)!r})"


def _unit(n, i):
    a = [0] * n
    a[i] = 1
    return tuple(a)


def expand_abs_power_even(base: Polynomial, p: int) -> Polynomial:
    """Expanded base**p for even p, where |g|^p == g^p.

    Odd p is rejected: callers must go through the split-measure machinery.
    """
    if p % 2 != 0 or p < 2:
        raise ValueError("p must be an even integer >= 2")
    return base ** p


# ---------------------------------------------------------------------------
# affine coordinate maps (rescaling metadata)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineMap:
    """Per-coordinate affine change of variables: natural x = scale*u + offset.

    Carried as metadata by rescaled sets so solutions computed in scaled
    coordinates can be mapped back.
    """
    scale: tuple
    offset: tuple

    def __post_init__(self):
        object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))
        object.__setattr__(self, "offset", tuple(float(t) for t in self.offset))
        if len(self.scale) != len(self.offset):
            raise ValueError("scale/offset length mismatch")
        if any(s <= 0 for s in self.scale):
            raise ValueError("scales must be positive")

    @property
    def dimension(self):
        return len(self.scale)

    @classmethod
    def identity(cls, n):
        return cls((1.0,) * n, (0.0,) * n)

    def is_identity(self):
        return all(s == 1.0 for s in self.scale) and all(t == 0.0 for t in self.offset)

    def to_natural(self, u):
        """Map scaled points (..., n) to natural coordinates."""
        import numpy as np
        u = np.asarray(u, dtype=float)
        return u * np.asarray(self.scale) + np.asarray(self.offset)

    def to_scaled(self, x):
        import numpy as np
        x = np.asarray(x, dtype=float)
        return (x - np.asarray(self.offset)) / np.asarray(self.scale)

    def concat(self, other: "AffineMap") -> "AffineMap":
        """Block-diagonal composition for product spaces."""
        return AffineMap(self.scale + other.scale, self.offset + other.offset)

    def pull_polynomial(self, p: Polynomial) -> Polynomial:
        """Natural-coordinate polynomial as a polynomial of scaled coordinates."""
        if p.dimension != self.dimension:
            raise ValueError("dimension mismatch")
        if self.is_identity():
            return p
        return p.affine_substitute(self.scale, self.offset)

    def push_polynomial(self, q: Polynomial) -> Polynomial:
        """Scaled-coordinate polynomial as a polynomial of natural coordinates."""
        if q.dimension != self.dimension:
            raise ValueError("dimension mismatch")
        inv_scale = tuple(1.0 / s for s in self.scale)
        inv_offset = tuple(-t / s for t, s in zip(self.offset, self.scale))
        return q.affine_substitute(inv_scale, inv_offset)


# ---------------------------------------------------------------------------
# semi-algebraic sets
# ---------------------------------------------------------------------------

def _ball_polynomial(n, radius):
    terms = {(0,) * n: radius * radius}
    for i in range(n):
        a = [0] * n
        a[i] = 2
        terms[tuple(a)] = -1.0
    return Polynomial(n, terms)


class SemialgebraicSet:
    """Compact basic semi-algebraic set {x : g_j(x) >= 0}.

    The Archimedean ball inequality R^2 - |x|^2 >= 0 is always present as
    the first stored inequality; it is appended automatically if the caller
    does not provide it.  ``transform`` records the affine map from these
    (possibly rescaled) coordinates back to natural coordinates.
    """

    __slots__ = ("dimension", "inequalities", "ball_radius", "transform")

    def __init__(self, dimension, inequalities=(), ball_radius=1.0, transform=None):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        if ball_radius <= 0:
            raise ValueError("ball radius must be positive")
        self.dimension = dimension
        self.ball_radius = float(ball_radius)
        ball = _ball_polynomial(dimension, self.ball_radius)
        extra = []
        for g in inequalities:
            if g.dimension != dimension:
                raise ValueError("inequality dimension mismatch")
            if g.total_degree < 1:
                raise ValueError("constant inequalities are not allowed")
            extra.append(g)
        self.inequalities = (ball,) + tuple(extra)
        if transform is not None and transform.dimension != dimension:
            raise ValueError("transform dimension mismatch")
        self.transform = transform or AffineMap.identity(dimension)

    # -- constructors in natural coordinates ---------------------------
    @classmethod
    def box(cls, lo, hi) -> "SemialgebraicSet":
        """Axis-aligned box, rescaled so it sits inside the unit ball.

        The returned set lives in scaled coordinates u = (x - center)/s with
        s the half-diagonal of the box; `transform` maps back.
        """
        lo = [float(v) for v in lo]
        hi = [float(v) for v in hi]
        n = len(lo)
        if len(hi) != n or any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("invalid box bounds")
        center = [(l + h) / 2.0 for l, h in zip(lo, hi)]
        half = [(h - l) / 2.0 for l, h in zip(lo, hi)]
        s = math.sqrt(sum(v * v for v in half))
        amap = AffineMap((s,) * n, tuple(center))
        quads = []
        for i in range(n):
            # (x_i - lo_i)(hi_i - x_i) >= 0 written in scaled coordinates
            xi = Polynomial.variable(n, i)
            g = (xi - lo[i]) * (hi[i] - xi)
            quads.append(amap.pull_polynomial(g).normalized())
        return cls(n, quads, ball_radius=1.0, transform=amap)

    @classmethod
    def ball(cls, center, radius) -> "SemialgebraicSet":
        """Euclidean ball, rescaled to the unit ball at the origin."""
        center = tuple(float(v) for v in center)
        n = len(center)
        if radius <= 0:
            raise ValueError("radius must be positive")
        amap = AffineMap((float(radius),) * n, center)
        return cls(n, (), ball_radius=1.0, transform=amap)

    @classmethod
    def unit_ball(cls, dimension) -> "SemialgebraicSet":
        return cls(dimension, (), ball_radius=1.0)

    def with_inequalities(self, extra) -> "SemialgebraicSet":
        """New set with additional polynomial inequalities (same coordinates)."""
        return SemialgebraicSet(self.dimension,
                                tuple(self.inequalities[1:]) + tuple(extra),
                                ball_radius=self.ball_radius,
                                transform=self.transform)

    def contains(self, point, tol=1e-9) -> bool:
        return all(g(point) >= -tol for g in self.inequalities)

    def __repr__(self):
        return (f"SemialgebraicSet(dim={self.dimension}, "
                f"J={len(self.inequalities)}, R={self.ball_radius})")


@dataclass(frozen=True)
class ProductStructure:
    """Bookkeeping for a product of semi-algebraic factors."""
    factor_dimensions: tuple
    factor_sets: tuple

    @property
    def dimension(self):
        return sum(self.factor_dimensions)

    @property
    def offsets(self):
        out = []
        acc = 0
        for d in self.factor_dimensions:
            out.append(acc)
            acc += d
        return tuple(out)


def product_set(factors, per_factor_balls=False):
    """Product of semi-algebraic sets, on disjoint coordinate blocks.

    By default the per-factor ball constraints are replaced by a single
    global ball with R^2 = sum R_i^2, which keeps the number of PSD blocks
    down; pass per_factor_balls=True to lift the factor balls as ordinary
    inequalities as well.
    """
    factors = tuple(factors)
    if not factors:
        raise ValueError("need at least one factor")
    if len(factors) == 1 and not per_factor_balls:
        return factors[0], ProductStructure((factors[0].dimension,), factors)
    n = sum(f.dimension for f in factors)
    radius = math.sqrt(sum(f.ball_radius ** 2 for f in factors))
    lifted = []
    offset = 0
    amap = None
    for f in factors:
        start = 1 if not per_factor_balls else 0
        for g in f.inequalities[start:]:
            lifted.append(g.embed(n, offset))
        amap = f.transform if amap is None else amap.concat(f.transform)
        offset += f.dimension
    out = SemialgebraicSet(n, lifted, ball_radius=radius, transform=amap)
    return out, ProductStructure(tuple(f.dimension for f in factors), factors)


# ---------------------------------------------------------------------------
# polynomial text format
# ---------------------------------------------------------------------------
# sum of `coef * x1^a1*...*xn^an` terms; whitespace and ^0 factors optional.

_FACTOR_RE = re.compile(r"^x(\d+)(?:\^(\d+))?$")


def format_polynomial(p: Polynomial) -> str:
    if not p.terms:
        return "0"
    items = sorted(p.terms.items(), key=lambda kv: (sum(kv[0]), _grlex_key(kv[0])))
    parts = []
    for alpha, coef in items:
        factors = [f"x{i + 1}" + (f"^{e}" if e > 1 else "")
                   for i, e in enumerate(alpha) if e > 0]
        body = "*".join([repr(coef)] + factors)
        parts.append(body)
    return " + ".join(parts).replace("+ -", "- ")


def _grlex_key(alpha):
    # within a degree block, larger leading exponents come first
    return tuple(-e for e in alpha)


def parse_polynomial(text: str, dimension=None) -> Polynomial:
    """Parse the text format produced by format_polynomial.

    Accepts arbitrary whitespace, optional '*' between coefficient and
    monomial, omitted ^1, and omitted zero-power variables.  If dimension
    is None it is inferred from the largest variable index present.
    """
    # whitespace is insignificant; hide scientific-notation signs before
    # splitting terms on +/-
    guarded = re.sub(r"\s+", "", text)
    guarded = re.sub(r"([eE])([+-])",
                     lambda m: m.group(1) + ("\x01" if m.group(2) == "+" else "\x02"),
                     guarded)
    guarded = guarded.replace("-", "+-")
    chunks = []
    for c in guarded.split("+"):
        c = c.replace("\x01", "+").replace("\x02", "-").strip()
        if c:
            chunks.append(c)
    if not chunks:
        raise ValueError("empty polynomial text")
    raw_terms = []
    max_var = 0
    for chunk in chunks:
        coef = 1.0
        if chunk.startswith("-"):
            coef = -1.0
            chunk = chunk[1:].strip()
        exps = {}
        saw_number = False
        for factor in chunk.split("*"):
            factor = factor.strip()
            if not factor:
                continue
            m = _FACTOR_RE.match(factor)
            if m:
                var = int(m.group(1))
                if var < 1:
                    raise ValueError(f"bad variable in {factor!r}")
                power = int(m.group(2)) if m.group(2) is not None else 1
                exps[var - 1] = exps.get(var - 1, 0) + power
                max_var = max(max_var, var)
            else:
                try:
                    coef *= float(factor)
                    saw_number = True
                except ValueError:
                    raise ValueError(f"cannot parse factor {factor!r}") from None
        if not exps and not saw_number:
            raise ValueError(f"empty term in {text!r}")
        raw_terms.append((coef, exps))
    n = dimension if dimension is not None else max(max_var, 1)
    terms = {}
    for coef, exps in raw_terms:
        if any(i >= n for i in exps):
            raise ValueError("variable index exceeds declared dimension")
        alpha = tuple(exps.get(i, 0) for i in range(n))
        terms[alpha] = terms.get(alpha, 0.0) + coef
    return Polynomial(n, terms)
