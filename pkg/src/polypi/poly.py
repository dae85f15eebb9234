"""Sparse multivariate polynomials, graded-lex monomial bases, and box integrals.

Monomials are exponent tuples over variables x1..xn.  The global term order is
degree-major lexicographic (grlex with x1 > x2 > ... inside each degree), so
coefficient vectors over a basis slice are contiguous by degree and stable
across runs.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

Exponents = tuple[int, ...]

# Coefficients smaller than this are dropped when canonicalizing the result of
# floating-point arithmetic; exact zeros are always dropped.
PRUNE_TOL = 1e-12


def grlex_key(exponents: Exponents):
    """Sort key for the degree-major lexicographic order (x1 > x2 > ...)."""
    return sum(exponents), tuple(-e for e in exponents)


def mono_mul(a: Exponents, b: Exponents) -> Exponents:
    return tuple(x + y for x, y in zip(a, b))


def mono_str(exponents: Exponents, names: tuple[str, ...] | None = None) -> str:
    names = names or tuple(f"x{i + 1}" for i in range(len(exponents)))
    factors = []
    for name, e in zip(names, exponents):
        if e == 1:
            factors.append(name)
        elif e > 1:
            factors.append(f"{name}^{e}")
    return "*".join(factors) if factors else "1"


class Polynomial:
    """Immutable sparse polynomial: a map from exponent tuples to coefficients.

    Zero coefficients are never stored, so two polynomials are equal iff their
    term maps are equal.  The zero polynomial has ``degree is None``.
    """

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: dict[Exponents, float] | None = None,
                 prune: float = 0.0):
        if n < 1:
            raise ValueError(f"need at least one variable, got n={n}")
        self.n = n
        clean: dict[Exponents, float] = {}
        for exp, c in (terms or {}).items():
            if len(exp) != n:
                raise ValueError(f"exponent tuple {exp} does not match n={n}")
            if any(e < 0 for e in exp):
                raise ValueError(f"negative exponent in {exp}")
            c = float(c)
            if c != 0.0 and abs(c) > prune:
                clean[tuple(exp)] = c
        self.terms = clean

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero(n: int) -> "Polynomial":
        return Polynomial(n)

    @staticmethod
    def constant(n: int, c: float) -> "Polynomial":
        return Polynomial(n, {(0,) * n: c})

    @staticmethod
    def variable(n: int, i: int) -> "Polynomial":
        if not 0 <= i < n:
            raise ValueError(f"variable index {i} out of range for n={n}")
        exp = [0] * n
        exp[i] = 1
        return Polynomial(n, {tuple(exp): 1.0})

    # -- basic queries -----------------------------------------------------

    @property
    def degree(self) -> int | None:
        if not self.terms:
            return None
        return max(sum(e) for e in self.terms)

    @property
    def min_degree(self) -> int | None:
        if not self.terms:
            return None
        return min(sum(e) for e in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, exp: Exponents) -> float:
        return self.terms.get(tuple(exp), 0.0)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Polynomial) and self.n == other.n
                and self.terms == other.terms)

    def __hash__(self):
        return hash((self.n, frozenset(self.terms.items())))

    # -- arithmetic --------------------------------------------------------

    def _check_same_vars(self, other: "Polynomial"):
        if self.n != other.n:
            raise ValueError(f"variable-count mismatch: {self.n} vs {other.n}")

    def __add__(self, other) -> "Polynomial":
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n, other)
        self._check_same_vars(other)
        out = dict(self.terms)
        for exp, c in other.terms.items():
            out[exp] = out.get(exp, 0.0) + c
        return Polynomial(self.n, out, prune=PRUNE_TOL)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.n, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other) -> "Polynomial":
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n, other)
        return self + (-other)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float)):
            return Polynomial(self.n, {e: c * other for e, c in self.terms.items()},
                              prune=PRUNE_TOL)
        self._check_same_vars(other)
        out: dict[Exponents, float] = {}
        for ea, ca in self.terms.items():
            for eb, cb in other.terms.items():
                e = mono_mul(ea, eb)
                out[e] = out.get(e, 0.0) + ca * cb
        return Polynomial(self.n, out, prune=PRUNE_TOL)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Polynomial":
        if k < 0:
            raise ValueError("negative powers not supported")
        out = Polynomial.constant(self.n, 1.0)
        for _ in range(k):
            out = out * self
        return out

    # -- calculus ----------------------------------------------------------

    def diff(self, i: int) -> "Polynomial":
        out: dict[Exponents, float] = {}
        for exp, c in self.terms.items():
            if exp[i] > 0:
                e = list(exp)
                e[i] -= 1
                out[tuple(e)] = out.get(tuple(e), 0.0) + c * exp[i]
        return Polynomial(self.n, out)

    def gradient(self) -> list["Polynomial"]:
        return [self.diff(i) for i in range(self.n)]

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.n},)")
        total = 0.0
        for exp, c in self.terms.items():
            v = c
            for xi, e in zip(x, exp):
                if e:
                    v *= xi ** e
            total += v
        return total

    def eval_last(self, values) -> "Polynomial":
        """Substitute constants for the trailing variables, dropping them."""
        values = tuple(float(v) for v in values)
        k = len(values)
        if not 0 < k < self.n:
            raise ValueError(f"can substitute 1..{self.n - 1} trailing variables")
        m = self.n - k
        out: dict[Exponents, float] = {}
        for exp, c in self.terms.items():
            for v, e in zip(values, exp[m:]):
                c *= v ** e
            head = exp[:m]
            out[head] = out.get(head, 0.0) + c
        return Polynomial(m, out, prune=PRUNE_TOL)

    # -- presentation ------------------------------------------------------

    def __repr__(self):
        return f"Polynomial({self.n}, {format_poly(self)!r})"

    def __str__(self):
        return format_poly(self)


def lie_derivative(V: Polynomial, vector_field: list[Polynomial]) -> Polynomial:
    """Directional derivative sum_i (dV/dx_i) * field_i."""
    if len(vector_field) != V.n:
        raise ValueError(f"field has {len(vector_field)} entries, expected {V.n}")
    out = Polynomial.zero(V.n)
    for i, fi in enumerate(vector_field):
        out = out + V.diff(i) * fi
    return out


# ---------------------------------------------------------------------------
# Monomial bases
# ---------------------------------------------------------------------------

def _monomials_of_degree(n: int, deg: int) -> list[Exponents]:
    out = []
    for combo in itertools.combinations_with_replacement(range(n), deg):
        exp = [0] * n
        for i in combo:
            exp[i] += 1
        out.append(tuple(exp))
    out.sort(key=grlex_key)
    return out


@dataclass(frozen=True)
class MonomialBasis:
    """All monomials with degree in [d1, d2], in grlex order.

    Length matches C(n+d2, d2) - C(n+d1-1, d1-1).  d1 = 0 (basis including the
    constant monomial) is supported for Gram bases of polynomials with
    constant terms, in which case the subtracted term is 0.
    """

    n: int
    d1: int
    d2: int
    exps: tuple[Exponents, ...]
    _index: dict[Exponents, int] = field(default_factory=dict, repr=False,
                                         compare=False)

    def __post_init__(self):
        self._index.update({e: i for i, e in enumerate(self.exps)})

    def __len__(self):
        return len(self.exps)

    def __iter__(self):
        return iter(self.exps)

    def __getitem__(self, i):
        return self.exps[i]

    def index(self, exp: Exponents) -> int:
        return self._index[tuple(exp)]

    def __contains__(self, exp) -> bool:
        return tuple(exp) in self._index

    def evaluate(self, x) -> np.ndarray:
        """Value of every basis monomial at a point."""
        x = np.asarray(x, dtype=float)
        E = np.array(self.exps, dtype=int)
        return np.prod(x[None, :] ** E, axis=1)

    def polynomial(self, coeffs) -> Polynomial:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (len(self),):
            raise ValueError(f"coefficient vector has shape {coeffs.shape}, "
                             f"expected ({len(self)},)")
        return Polynomial(self.n, dict(zip(self.exps, coeffs)), prune=0.0)

    def coefficients(self, p: Polynomial) -> np.ndarray:
        """Coefficient vector of p over this basis; error if p leaves its span."""
        if p.n != self.n:
            raise ValueError(f"variable-count mismatch: {p.n} vs {self.n}")
        out = np.zeros(len(self))
        for exp, c in p.terms.items():
            if exp not in self._index:
                raise ValueError(f"monomial {mono_str(exp)} outside basis "
                                 f"m_{{{self.d1},{self.d2}}}")
            out[self._index[exp]] = c
        return out


@lru_cache(maxsize=None)
def basis(n: int, d1: int, d2: int) -> MonomialBasis:
    """The ordered monomial vector m_{d1,d2}(x) in n variables."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if not 0 <= d1 <= d2:
        raise ValueError(f"need 0 <= d1 <= d2, got d1={d1}, d2={d2}")
    exps = []
    for deg in range(d1, d2 + 1):
        exps.extend(_monomials_of_degree(n, deg))
    return MonomialBasis(n, d1, d2, tuple(exps))


def basis_size(n: int, d1: int, d2: int) -> int:
    """Counting formula C(n+d2, d2) - C(n+d1-1, d1-1)."""
    low = math.comb(n + d1 - 1, d1 - 1) if d1 >= 1 else 0
    return math.comb(n + d2, d2) - low


# ---------------------------------------------------------------------------
# Boxes and integrals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis-aligned product of closed intervals [lo_i, hi_i]."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("lo and hi must have the same length")
        for lo, hi in zip(self.lo, self.hi):
            if lo > hi:
                raise ValueError(f"empty interval [{lo}, {hi}]")

    @property
    def n(self) -> int:
        return len(self.lo)

    def contains_origin_interior(self) -> bool:
        return all(lo < 0.0 < hi for lo, hi in zip(self.lo, self.hi))

    def require_origin_interior(self, what: str = "box"):
        if not self.contains_origin_interior():
            raise ValueError(f"{what} must contain the origin in its interior")

    def vertices(self):
        """All corner points (degenerate intervals contribute one value)."""
        seen = set()
        for picks in itertools.product(*zip(self.lo, self.hi)):
            if picks not in seen:
                seen.add(picks)
                yield tuple(picks)

    def grid(self, per_axis: int) -> np.ndarray:
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(count, self.n))

    @staticmethod
    def symmetric(n: int, radius: float) -> "Box":
        return Box((-radius,) * n, (radius,) * n)


def mono_box_integral(exp: Exponents, box: Box) -> float:
    """Integral of a single monomial over a box, as a product of 1-d integrals."""
    val = 1.0
    for e, lo, hi in zip(exp, box.lo, box.hi):
        val *= (hi ** (e + 1) - lo ** (e + 1)) / (e + 1)
    return val


def box_integral(b: MonomialBasis, box: Box) -> np.ndarray:
    """Vector of integrals of each basis monomial over the box."""
    if b.n != box.n:
        raise ValueError(f"dimension mismatch: basis n={b.n}, box n={box.n}")
    return np.array([mono_box_integral(e, box) for e in b.exps])


def integrate_over_box(p: Polynomial, box: Box) -> float:
    if p.n != box.n:
        raise ValueError(f"dimension mismatch: poly n={p.n}, box n={box.n}")
    return sum(c * mono_box_integral(e, box) for e, c in p.terms.items())


# ---------------------------------------------------------------------------
# Text format: sum of `coeff*x1^a1*...*xn^an` terms, emitted in grlex order
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"""\s*(?:
    (?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_]\w*)
  | (?P<op>\*\*|[*^+-])
)""", re.VERBOSE)


def format_poly(p: Polynomial, names: tuple[str, ...] | None = None) -> str:
    if not p.terms:
        return "0"
    parts = []
    for exp in sorted(p.terms, key=grlex_key):
        c = p.terms[exp]
        mono = mono_str(exp, names)
        if mono == "1":
            body = repr(abs(c))
        elif abs(c) == 1.0:
            body = mono
        else:
            body = f"{abs(c)!r}*{mono}"
        if not parts:
            parts.append(f"-{body}" if c < 0 else body)
        else:
            parts.append(f"{'-' if c < 0 else '+'} {body}")
    return " ".join(parts)


def parse_poly(text: str, n: int, names: tuple[str, ...] | None = None) -> Polynomial:
    """Parse the term-sum text format back into a polynomial.

    Accepts `^` or `**` powers, explicit or implicit unit coefficients, and
    scientific notation.  Variables default to x1..xn.
    """
    names = names or tuple(f"x{i + 1}" for i in range(n))
    if len(names) != n:
        raise ValueError(f"{len(names)} names for {n} variables")
    name_idx = {nm: i for i, nm in enumerate(names)}

    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip():
                raise ValueError(f"bad character at position {pos}: {text[pos:]!r}")
            break
        pos = m.end()
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))

    terms: dict[Exponents, float] = {}
    i = 0

    def parse_term(sign: float):
        nonlocal i
        coeff = sign
        exp = [0] * n
        expect_factor = True
        saw_factor = False
        while i < len(tokens):
            kind, val = tokens[i]
            if kind == "op" and val in "+-" and not expect_factor:
                break
            if kind == "op" and val in "+-":  # unary sign inside a term
                coeff *= -1.0 if val == "-" else 1.0
                i += 1
                continue
            if kind == "op" and val == "*":
                if not saw_factor:
                    raise ValueError("unexpected '*'")
                expect_factor = True
                i += 1
                continue
            if kind == "num":
                coeff *= float(val)
                i += 1
            elif kind == "name":
                if val not in name_idx:
                    raise ValueError(f"unknown variable {val!r}")
                power = 1
                i += 1
                if i < len(tokens) and tokens[i] == ("op", "^") or \
                        (i < len(tokens) and tokens[i] == ("op", "**")):
                    i += 1
                    if i >= len(tokens) or tokens[i][0] != "num":
                        raise ValueError(f"missing exponent after {val}")
                    power = int(float(tokens[i][1]))
                    i += 1
                exp[name_idx[val]] += power
            else:
                raise ValueError(f"unexpected token {val!r}")
            saw_factor = True
            expect_factor = False
        if not saw_factor:
            raise ValueError("empty term")
        key = tuple(exp)
        terms[key] = terms.get(key, 0.0) + coeff

    while i < len(tokens):
        sign = 1.0
        while i < len(tokens) and tokens[i][0] == "op" and tokens[i][1] in "+-":
            if tokens[i][1] == "-":
                sign = -sign
            i += 1
        if i >= len(tokens):
            if sign != 1.0:
                raise ValueError("dangling sign")
            break
        parse_term(sign)

    return Polynomial(n, terms)
