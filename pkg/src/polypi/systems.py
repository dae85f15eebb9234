"""Control-affine polynomial systems, running costs, and parameterized values.

The plant is  xdot = f(x) + g(x) u  with polynomial f (f(0) = 0) and g; the
running cost is r(x, u) = q(x) + u^T R u with constant symmetric R > 0.
Value functions live on the basis m_{2,2r}(x) and policies on m_{1,d}(x).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .poly import Box, MonomialBasis, Polynomial, basis, format_poly, mono_str


@dataclass(frozen=True)
class PolySystem:
    f: tuple[Polynomial, ...]
    g: tuple[tuple[Polynomial, ...], ...]  # n rows of m columns

    def __post_init__(self):
        n = len(self.f)
        if n == 0:
            raise ValueError("empty state vector")
        if len(self.g) != n:
            raise ValueError(f"g has {len(self.g)} rows, expected {n}")
        m = len(self.g[0])
        for row in self.g:
            if len(row) != m:
                raise ValueError("ragged input matrix g")
        for p in list(self.f) + [e for row in self.g for e in row]:
            if p.n != n:
                raise ValueError("system polynomials must share the state "
                                 "variable count")
        for i, fi in enumerate(self.f):
            if fi.coefficient((0,) * n) != 0.0:
                raise ValueError(f"f[{i}] has a constant term; f(0) must be 0")

    @property
    def n(self) -> int:
        return len(self.f)

    @property
    def m(self) -> int:
        return len(self.g[0])

    def deg_f(self) -> int:
        return max((p.degree or 0) for p in self.f)

    def deg_g(self) -> int:
        return max((p.degree or 0) for row in self.g for p in row)

    def closed_loop_field(self, u: list[Polynomial]) -> list[Polynomial]:
        """f + g u as exact polynomials."""
        if len(u) != self.m:
            raise ValueError(f"policy has {len(u)} entries, expected {self.m}")
        out = []
        for i in range(self.n):
            fi = self.f[i]
            for j in range(self.m):
                fi = fi + self.g[i][j] * u[j]
            out.append(fi)
        return out

    @staticmethod
    def single_input(f: list[Polynomial], g_col: list[Polynomial]) -> "PolySystem":
        return PolySystem(tuple(f), tuple((e,) for e in g_col))


@dataclass(frozen=True)
class CostSpec:
    q: Polynomial
    R: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        object.__setattr__(self, "R", R)
        if R.shape[0] != R.shape[1]:
            raise ValueError("R must be square")
        if not np.allclose(R, R.T, atol=1e-12):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(R)[0] <= 0:
            raise ValueError("R must be positive definite")
        if (self.q.min_degree or 0) < 2:
            raise ValueError("q must vanish at the origin with no linear part")

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def R_inv(self) -> np.ndarray:
        return np.linalg.inv(self.R)

    def running_cost(self, u: list[Polynomial]) -> Polynomial:
        """r(x, u(x)) = q + u^T R u as a polynomial in x."""
        out = self.q
        for a in range(self.m):
            for b in range(self.m):
                if self.R[a, b] != 0.0:
                    out = out + self.R[a, b] * (u[a] * u[b])
        return out


@dataclass(frozen=True)
class ValueFn:
    """V = p^T m_{2,2r}(x): positive-degree polynomial with no linear part."""

    n: int
    r: int
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "p", p)
        if p.shape != (len(self.basis),):
            raise ValueError(f"coefficient vector has length {p.shape}, "
                             f"expected {len(self.basis)}")

    @property
    def basis(self) -> MonomialBasis:
        return basis(self.n, 2, 2 * self.r)

    def polynomial(self) -> Polynomial:
        return self.basis.polynomial(self.p)

    def __call__(self, x) -> float:
        return float(self.basis.evaluate(x) @ self.p)

    @staticmethod
    def from_polynomial(p: Polynomial, r: int) -> "ValueFn":
        b = basis(p.n, 2, 2 * r)
        return ValueFn(p.n, r, b.coefficients(p))

    def __str__(self):
        return format_poly(self.polynomial())


@dataclass(frozen=True)
class Policy:
    """u = K m_{1,d}(x): m feedback polynomials vanishing at the origin."""

    n: int
    d: int
    K: np.ndarray

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        object.__setattr__(self, "K", K)
        if K.shape[1] != len(self.basis):
            raise ValueError(f"K has {K.shape[1]} columns, expected "
                             f"{len(self.basis)}")

    @property
    def basis(self) -> MonomialBasis:
        return basis(self.n, 1, self.d)

    @property
    def m(self) -> int:
        return self.K.shape[0]

    def polynomials(self) -> list[Polynomial]:
        return [self.basis.polynomial(self.K[j]) for j in range(self.m)]

    def __call__(self, x) -> np.ndarray:
        return self.K @ self.basis.evaluate(x)

    @staticmethod
    def from_polynomials(entries: list[Polynomial], d: int) -> "Policy":
        b = basis(entries[0].n, 1, d)
        try:
            K = np.stack([b.coefficients(p) for p in entries])
        except ValueError as err:
            raise ValueError(f"policy degree overflow: {err}") from err
        return Policy(entries[0].n, d, K)

    def __str__(self):
        return "; ".join(format_poly(p) for p in self.polynomials())


@dataclass(frozen=True)
class PolyFamily:
    """System family with uncertain constants entering f and g affinely.

    Entries are polynomials in (x1..xn, b1..bk); the parameter box bounds the
    trailing k variables.  Vertex enumeration of the box is sound for SOS
    robustness exactly because the entry is affine, which is validated here.
    """

    n: int
    f: tuple[Polynomial, ...]
    g: tuple[tuple[Polynomial, ...], ...]
    param_box: Box

    def __post_init__(self):
        k = self.param_box.n
        for p in list(self.f) + [e for row in self.g for e in row]:
            if p.n != self.n + k:
                raise ValueError(f"family entries must have {self.n + k} "
                                 f"variables (n states + k parameters)")
            for exp in p.terms:
                if sum(exp[self.n:]) > 1:
                    raise ValueError(
                        f"parameters enter non-affinely in term "
                        f"{mono_str(exp)}; vertex enumeration would be unsound")

    @property
    def k(self) -> int:
        return self.param_box.n

    @property
    def m(self) -> int:
        return len(self.g[0])

    def instantiate(self, theta) -> PolySystem:
        theta = tuple(float(v) for v in theta)
        if len(theta) != self.k:
            raise ValueError(f"expected {self.k} parameters")
        f = tuple(p.eval_last(theta) for p in self.f)
        g = tuple(tuple(p.eval_last(theta) for p in row) for row in self.g)
        return PolySystem(f, g)

    def vertex_systems(self):
        for v in self.param_box.vertices():
            yield v, self.instantiate(v)
