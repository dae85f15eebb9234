"""Compile SOS programs into semidefinite programs and verify Gram certificates.

An SOS program is a linear objective over scalar decision variables together
with polynomials that are affine in those variables and tagged "is SOS".  Each
tagged polynomial becomes one PSD Gram block; coefficient matching ties the
Gram entries to the decision variables monomial by monomial, which is the
standard equivalence between SOS programs and SDPs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .poly import (MonomialBasis, Polynomial, basis, grlex_key, mono_mul,
                   mono_str)
from .sdp import (SQRT2, SdpProblem, SdpSolution, SolverOptions, solve,
                  svec_dim)

# Certificate acceptance: coefficient-wise reconstruction error and the most
# negative Gram eigenvalue tolerated, matching the 4-significant-digit regime
# of the downstream controllers.
CERT_RECON_TOL = 1e-6
CERT_EIG_FLOOR = -1e-7
# Interior-point iterates can graze the PSD boundary; eigenvalues down to this
# are repaired by a diagonal shift before verification, anything worse fails.
CERT_REPAIR_LIMIT = 1e-5


class CompileError(ValueError):
    pass


class CertificateError(RuntimeError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(message)


@dataclass(frozen=True)
class DecisionVector:
    """Named scalar decision variables with a dense index map."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("decision names must be unique")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @staticmethod
    def numbered(prefix: str, count: int) -> "DecisionVector":
        return DecisionVector(tuple(f"{prefix}{i}" for i in range(count)))


@dataclass
class AffinePolynomial:
    """constant(x) + sum_v sens[v](x) * y_v, affine in the decisions y."""

    constant: Polynomial
    sens: dict[str, Polynomial] = field(default_factory=dict)

    def __post_init__(self):
        for p in self.sens.values():
            if p.n != self.constant.n:
                raise ValueError("sensitivity variable counts differ")

    @property
    def n(self) -> int:
        return self.constant.n

    def monomials(self) -> set:
        out = set(self.constant.terms)
        for p in self.sens.values():
            out |= set(p.terms)
        return out

    def at(self, values: dict[str, float]) -> Polynomial:
        out = self.constant
        for name, p in self.sens.items():
            out = out + values.get(name, 0.0) * p
        return out


@dataclass
class SosProgram:
    """min objective . y subject to SOS tags, linear equalities, and bounds."""

    decisions: DecisionVector
    objective: np.ndarray
    sos_constraints: list[AffinePolynomial] = field(default_factory=list)
    linear_eq: list[tuple[dict[str, float], float]] = field(default_factory=list)
    bounds: dict[str, tuple[float | None, float | None]] = field(default_factory=dict)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        if self.objective.shape != (len(self.decisions),):
            raise ValueError("objective length must match decision count")


@dataclass
class GramCertificate:
    """Q >= 0 with m(x)^T Q m(x) equal to the certified polynomial."""

    basis: MonomialBasis
    gram: np.ndarray
    reconstruction_residual: float
    min_eigenvalue: float

    def polynomial(self) -> Polynomial:
        return gram_polynomial(self.basis, self.gram)


def gram_polynomial(b: MonomialBasis, Q: np.ndarray) -> Polynomial:
    terms: dict = {}
    for i, mi in enumerate(b.exps):
        for j in range(i, len(b)):
            mu = mono_mul(mi, b.exps[j])
            w = Q[i, j] if i == j else Q[i, j] + Q[j, i]
            terms[mu] = terms.get(mu, 0.0) + w
    return Polynomial(b.n, terms, prune=0.0)


def gram_basis_for(poly_degrees: tuple[int, int], n: int) -> MonomialBasis:
    """Monomial vector whose pairwise products span degrees [dmin, dmax].

    Returns m_{ceil(dmin/2), dmax/2}.  dmax must be even; dmin = 0 admits
    polynomials with constant terms.
    """
    dmin, dmax = poly_degrees
    if dmax % 2 != 0:
        raise CompileError(f"SOS constraint has odd maximum degree {dmax}")
    if dmin < 0 or dmin > dmax:
        raise CompileError(f"bad degree range ({dmin}, {dmax})")
    return basis(n, math.ceil(dmin / 2), dmax // 2)


@dataclass
class CompiledSdp:
    """SDP plus the index maps needed to recover certificates."""

    sdp: SdpProblem
    program: SosProgram
    gram_bases: list[MonomialBasis]
    num_constraint_blocks: int


def compile_sos(program: SosProgram) -> CompiledSdp:
    """Lower an SOS program to a block-diagonal SDP.

    One PSD block per SOS constraint (over ``gram_basis_for`` of its degree
    range), one equality row per monomial appearing on either side, then the
    program's own linear equalities, then slack blocks for variable bounds.
    The construction is deterministic: identical programs produce identical
    triplet encodings.
    """
    n_dec = len(program.decisions)
    dec_index = {name: k for k, name in enumerate(program.decisions.names)}

    gram_bases: list[MonomialBasis] = []
    for con in program.sos_constraints:
        monos = con.monomials()
        if not monos:
            gram_bases.append(basis(con.n, 1, 1))
            continue
        degs = [sum(e) for e in monos]
        dmin, dmax = min(degs), max(degs)
        dmin -= dmin % 2
        gram_bases.append(gram_basis_for((dmin, dmax), con.n))

    block_dims = [len(b) for b in gram_bases]
    n_bound_blocks = sum((lo is not None) + (hi is not None)
                         for lo, hi in program.bounds.values())
    offsets = [0]
    for d in block_dims + [1] * n_bound_blocks:
        offsets.append(offsets[-1] + svec_dim(d))
    free_base = offsets[-1]

    entries: list[tuple[int, int, float]] = []
    rhs: list[float] = []
    row = 0

    for con, gb, k in zip(program.sos_constraints, gram_bases,
                          range(len(gram_bases))):
        # svec coordinate of Gram entry (i, j), i <= j, within block k
        def coord(i, j):
            return offsets[k] + svec_dim(j) + i

        products: dict = {}
        for j in range(len(gb)):
            for i in range(j + 1):
                mu = mono_mul(gb.exps[i], gb.exps[j])
                products.setdefault(mu, []).append((i, j))
        all_monos = sorted(set(products) | con.monomials(), key=grlex_key)

        for mu in all_monos:
            cols: dict[int, float] = {}
            for (i, j) in products.get(mu, ()):
                cols[coord(i, j)] = cols.get(coord(i, j), 0.0) + \
                    (1.0 if i == j else SQRT2)
            for name, p in con.sens.items():
                c = p.terms.get(mu, 0.0)
                if c != 0.0:
                    col = free_base + dec_index[name]
                    cols[col] = cols.get(col, 0.0) - c
            for col in sorted(cols):
                entries.append((row, col, cols[col]))
            rhs.append(con.constant.terms.get(mu, 0.0))
            row += 1

    for coeffs, r in program.linear_eq:
        for name in sorted(coeffs, key=dec_index.__getitem__):
            if coeffs[name] != 0.0:
                entries.append((row, free_base + dec_index[name], coeffs[name]))
        rhs.append(float(r))
        row += 1

    slack = len(gram_bases)
    for name in sorted(program.bounds, key=dec_index.__getitem__):
        lo, hi = program.bounds[name]
        if lo is not None:  # y - s = lo, s >= 0
            entries.append((row, offsets[slack], -1.0))
            entries.append((row, free_base + dec_index[name], 1.0))
            rhs.append(float(lo))
            row += 1
            slack += 1
        if hi is not None:  # y + s = hi, s >= 0
            entries.append((row, offsets[slack], 1.0))
            entries.append((row, free_base + dec_index[name], 1.0))
            rhs.append(float(hi))
            row += 1
            slack += 1

    objective = [0.0] * free_base + [float(v) for v in program.objective]
    sdp = SdpProblem(block_dims=tuple(block_dims + [1] * n_bound_blocks),
                     num_free=n_dec, num_rows=row, entries=tuple(entries),
                     rhs=tuple(rhs), objective=tuple(objective))
    return CompiledSdp(sdp=sdp, program=program, gram_bases=gram_bases,
                       num_constraint_blocks=len(gram_bases))


def extract_certificates(solution: SdpSolution,
                         compiled: CompiledSdp) -> list[GramCertificate]:
    """Recover and verify one Gram certificate per SOS constraint.

    Verification is a hard check, not an assumption: the reconstructed
    polynomial must match the achieved polynomial coefficient-wise within
    CERT_RECON_TOL and the Gram matrix must be PSD down to CERT_EIG_FLOOR.
    """
    if not solution.is_optimal:
        raise ValueError(f"cannot extract certificates from status "
                         f"{solution.status!r}")
    values = dict(zip(compiled.program.decisions.names, solution.free))
    certs = []
    for k in range(compiled.num_constraint_blocks):
        gb = compiled.gram_bases[k]
        Q = solution.blocks[k]
        Q = 0.5 * (Q + Q.T)
        eig_min = float(np.linalg.eigvalsh(Q)[0]) if len(Q) else 0.0
        if -CERT_REPAIR_LIMIT <= eig_min < 0.0:
            Q = Q - eig_min * np.eye(len(Q))
            eig_min = float(np.linalg.eigvalsh(Q)[0])
        achieved = compiled.program.sos_constraints[k].at(values)
        recon = gram_polynomial(gb, Q)
        diff = recon - achieved
        residual = max((abs(c) for c in diff.terms.values()), default=0.0)
        if residual > CERT_RECON_TOL:
            raise CertificateError(
                f"constraint {k}: reconstruction residual {residual:.3e} "
                f"exceeds {CERT_RECON_TOL:.1e}", residual)
        if eig_min < CERT_EIG_FLOOR:
            raise CertificateError(
                f"constraint {k}: Gram eigenvalue {eig_min:.3e} below "
                f"{CERT_EIG_FLOOR:.1e}", -eig_min)
        certs.append(GramCertificate(basis=gb, gram=Q,
                                     reconstruction_residual=residual,
                                     min_eigenvalue=eig_min))
    return certs


@dataclass
class SosSolveResult:
    solution: SdpSolution
    values: np.ndarray
    certificates: list[GramCertificate]

    @property
    def status(self) -> str:
        return self.solution.status


def solve_sos(program: SosProgram,
              opts: SolverOptions = SolverOptions()) -> SosSolveResult:
    """Compile, solve, and (when optimal) certify an SOS program."""
    compiled = compile_sos(program)
    solution = solve(compiled.sdp, opts)
    certificates = []
    values = np.zeros(len(program.decisions))
    if solution.is_optimal:
        values = np.array(solution.free)
        certificates = extract_certificates(solution, compiled)
    return SosSolveResult(solution=solution, values=values,
                          certificates=certificates)


def certify_sos(p: Polynomial,
                opts: SolverOptions = SolverOptions()) -> GramCertificate | None:
    """Feasibility check for a fixed polynomial; None when not certifiable."""
    program = SosProgram(decisions=DecisionVector(()), objective=np.zeros(0),
                         sos_constraints=[AffinePolynomial(constant=p)])
    result = solve_sos(program, opts)
    if result.status == "optimal":
        return result.certificates[0]
    return None
