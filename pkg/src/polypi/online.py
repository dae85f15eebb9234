"""Model-free policy evaluation and improvement from interval data.

Along any trajectory of  xdot = f + g(u_i + e),  the value identity

    p' [m(x(t)) - m(x(t+dt))] = int_t^{t+dt} ( r(x,u_i) + l_p' m_{2,2d}(x)
                                               + 2 m_{1,d}'(x) K_p' R e ) dt

ties the unknown expansion coefficients (l_p, K_p) of the decay rate and the
improved policy to measured integrals only.  Stacking intervals gives
Phi [l_p; vec(K_p)] = Xi + Theta p; once Phi has full column rank the pair is
eliminated by least squares and the policy-evaluation program runs on data
alone, no f or g.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .poly import Box, Polynomial, basis, box_integral, lie_derivative
from .pi import IterationRecord, IterationTrace, _policy_polys
from .sdp import NUMERICAL_FAILURE, OPTIMAL, SolverOptions
from .sos import (AffinePolynomial, DecisionVector, GramCertificate,
                  SosProgram, solve_sos)
from .sim import IntervalQuadratures, NoiseSpec, OnlinePlant
from .systems import CostSpec, Policy, PolySystem, ValueFn

RANK_TOL = 1e-8
RESIDUAL_WARN_FACTOR = 1e-3


class LearningTimeoutError(RuntimeError):
    pass


class OnlineStepError(RuntimeError):
    pass


@dataclass(frozen=True)
class DataBatch:
    """Stacked interval integrals: Phi q x (n2d + m nd), Xi q, Theta q x n2r."""

    phi: np.ndarray
    xi: np.ndarray
    theta: np.ndarray
    n: int
    m: int
    r: int
    d: int
    t_intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        n2d = len(basis(self.n, 2, 2 * self.d))
        nd = len(basis(self.n, 1, self.d))
        n2r = len(basis(self.n, 2, 2 * self.r))
        q = self.phi.shape[0]
        if self.phi.shape != (q, n2d + self.m * nd):
            raise ValueError(f"Phi has shape {self.phi.shape}, expected "
                             f"({q}, {n2d + self.m * nd})")
        if self.xi.shape != (q,) or self.theta.shape != (q, n2r):
            raise ValueError("row counts of Phi, Xi, Theta must agree")

    @property
    def rows(self) -> int:
        return self.phi.shape[0]

    @property
    def unknowns(self) -> int:
        return self.phi.shape[1]


def assemble(parts: list[IntervalQuadratures], n: int, m: int, r: int,
             d: int) -> DataBatch:
    """Stack interval quadratures into the regression matrices."""
    if not parts:
        raise ValueError("no intervals to assemble")
    width = len(parts[0].sigma)
    for part in parts:
        if len(part.sigma) != width or \
                len(part.v_basis_diff) != len(parts[0].v_basis_diff):
            raise ValueError("interval quadratures use mismatched bases")
    return DataBatch(
        phi=np.stack([part.sigma for part in parts]),
        xi=np.array([part.cost for part in parts]),
        theta=np.stack([part.v_basis_diff for part in parts]),
        n=n, m=m, r=r, d=d,
        t_intervals=tuple((part.t0, part.t1) for part in parts))


def numerical_rank(batch: DataBatch, tol: float = RANK_TOL) -> int:
    s = np.linalg.svd(batch.phi, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def rank_ok(batch: DataBatch, tol: float = RANK_TOL) -> bool:
    return numerical_rank(batch, tol) == batch.unknowns


# ---------------------------------------------------------------------------
# Model-based coefficient maps (oracles for the data path, never used online)
# ---------------------------------------------------------------------------

def model_coefficient_maps(sys: PolySystem, cost: CostSpec, u, r: int,
                           d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact (A_L, b_L, A_K) with l_p = A_L p + b_L and vec(K_p) = A_K p.

    vec is column-stacking: entry k*m + l is input l's coefficient on the k-th
    monomial of m_{1,d}.
    """
    vb = basis(sys.n, 2, 2 * r)
    b2d = basis(sys.n, 2, 2 * d)
    b1d = basis(sys.n, 1, d)
    up = _policy_polys(u, sys.m)
    field_polys = sys.closed_loop_field(up)
    Rinv = cost.R_inv()

    A_L = np.zeros((len(b2d), len(vb)))
    A_K = np.zeros((sys.m * len(b1d), len(vb)))
    for j, exp in enumerate(vb.exps):
        mono = Polynomial(sys.n, {exp: 1.0})
        A_L[:, j] = b2d.coefficients(-lie_derivative(mono, field_polys))
        grad = mono.gradient()
        w = [Polynomial.zero(sys.n) for _ in range(sys.m)]
        for k in range(sys.m):
            for i in range(sys.n):
                w[k] = w[k] + sys.g[i][k] * grad[i]
        for l in range(sys.m):
            ul = Polynomial.zero(sys.n)
            for k in range(sys.m):
                if Rinv[l, k] != 0.0:
                    ul = ul + (-0.5 * Rinv[l, k]) * w[k]
            coeffs = b1d.coefficients(ul)
            for k in range(len(b1d)):
                A_K[k * sys.m + l, j] = coeffs[k]
    b_L = b2d.coefficients(-cost.running_cost(up))
    return A_L, b_L, A_K


def model_exact_batch(phi: np.ndarray, sys: PolySystem, cost: CostSpec, u,
                      r: int, d: int) -> DataBatch:
    """Replace measured Xi and Theta by their model-implied exact values.

    For any excitation matrix Phi, setting Xi = Phi [b_L; 0] and
    Theta = Phi [A_L; A_K] makes the data identity hold exactly for every p,
    so the online program's feasible set coincides with the offline one.
    """
    A_L, b_L, A_K = model_coefficient_maps(sys, cost, u, r, d)
    stacked = np.vstack([A_L, A_K])
    return DataBatch(phi=np.asarray(phi, float),
                     xi=np.asarray(phi, float) @ np.concatenate(
                         [b_L, np.zeros(A_K.shape[0])]),
                     theta=np.asarray(phi, float) @ stacked,
                     n=sys.n, m=sys.m, r=r, d=d)


def data_identity_residual(batch: DataBatch, sys: PolySystem, cost: CostSpec,
                           u, p: np.ndarray) -> float:
    """|Phi [l_p; vec K_p] - Xi - Theta p| with (l_p, K_p) from the model."""
    A_L, b_L, A_K = model_coefficient_maps(sys, cost, u, batch.r, batch.d)
    lk = np.concatenate([A_L @ p + b_L, A_K @ p])
    return float(np.linalg.norm(batch.phi @ lk - batch.xi - batch.theta @ p))


# ---------------------------------------------------------------------------
# Online policy evaluation / improvement
# ---------------------------------------------------------------------------

@dataclass
class OnlineIterate:
    p: np.ndarray
    K_next: np.ndarray
    l_p: np.ndarray
    residual: float
    residual_warning: bool
    certificates: list[GramCertificate]
    objective: float
    status: str


def online_step(batch: DataBatch, p_prev: np.ndarray, c: np.ndarray,
                opts: SolverOptions = SolverOptions(),
                warn_factor: float = RESIDUAL_WARN_FACTOR) -> OnlineIterate:
    """One data-driven policy evaluation and improvement.

    Eliminates (l_p, vec K_p) by least squares, then minimizes c'p subject to
    l_p' m_{2,2d} SOS and (p_prev - p)' m_{2,2r} SOS.  The least-squares
    residual at the optimum is reported; a large one means the measured data
    are inconsistent (warn, not fatal).
    """
    if not rank_ok(batch):
        raise ValueError(
            f"rank condition violated: numerical rank {numerical_rank(batch)} "
            f"< {batch.unknowns}; collect more excited data")
    b2d = basis(batch.n, 2, 2 * batch.d)
    vb = basis(batch.n, 2, 2 * batch.r)
    n2d = len(b2d)
    p_prev = np.asarray(p_prev, dtype=float)

    G = np.linalg.pinv(batch.phi, rcond=1e-12)
    w0 = G @ batch.xi            # affine parts of the elimination
    W = G @ batch.theta

    decisions = DecisionVector.numbered("p", len(vb))
    l_const = b2d.polynomial(w0[:n2d])
    l_sens = {f"p{k}": b2d.polynomial(W[:n2d, k]) for k in range(len(vb))}
    diff_sens = {f"p{k}": -vb.polynomial(np.eye(len(vb))[k])
                 for k in range(len(vb))}
    program = SosProgram(
        decisions=decisions,
        objective=np.asarray(c, dtype=float),
        sos_constraints=[
            AffinePolynomial(constant=l_const, sens=l_sens),
            AffinePolynomial(constant=vb.polynomial(p_prev), sens=diff_sens),
        ],
    )
    result = solve_sos(program, opts)
    if result.status == NUMERICAL_FAILURE:
        result = solve_sos(program, opts.loosened(10.0))
    if result.status != OPTIMAL:
        raise OnlineStepError(
            f"online policy evaluation returned {result.status!r}; collect "
            f"more data or relax the solver tolerance")

    p = result.values
    lk = w0 + W @ p
    l_p = lk[:n2d]
    vec_k = lk[n2d:]
    K_next = vec_k.reshape(-1, batch.m).T
    residual = float(np.linalg.norm(batch.phi @ lk - batch.xi
                                    - batch.theta @ p))
    warn_at = warn_factor * (1.0 + float(np.linalg.norm(batch.xi)))
    warned = residual > warn_at
    if warned:
        warnings.warn(f"data equation residual {residual:.3e} exceeds "
                      f"{warn_at:.3e}; measured intervals look inconsistent",
                      RuntimeWarning, stacklevel=2)
    return OnlineIterate(p=p, K_next=K_next, l_p=l_p, residual=residual,
                         residual_warning=warned,
                         certificates=result.certificates,
                         objective=float(result.solution.primal_objective),
                         status=result.status)


@dataclass(frozen=True)
class Schedule:
    """Learning cadence: window per policy, interval length, excitation."""

    window: float
    delta_t: float
    noise: NoiseSpec
    max_iter: int = 10
    rank_tol: float = RANK_TOL
    window_factor: int = 3  # collection may stretch to this many windows


def run_online(plant: OnlinePlant, cost: CostSpec, V0: ValueFn, u1: Policy,
               r: int, d: int, omega: Box, eps: float, schedule: Schedule,
               opts: SolverOptions = SolverOptions()) -> IterationTrace:
    """Alternate data collection and online policy updates until the
    coefficient step falls under eps.

    The plant handle hides the dynamics; only measured quadratures reach the
    optimizer.  Collection keeps extending (up to the schedule's grace factor)
    while the excitation matrix is rank-short; running out of grace raises a
    learning timeout.
    """
    omega.require_origin_interior("Omega")
    vb = basis(plant.n, 2, 2 * r)
    c = box_integral(vb, omega)
    trace = IterationTrace()
    p_prev = np.array(V0.p)
    u = u1
    for i in range(1, schedule.max_iter + 1):
        parts: list[IntervalQuadratures] = []
        batch = None
        for attempt in range(schedule.window_factor):
            parts.extend(plant.run_window(u, schedule.noise, schedule.window,
                                          schedule.delta_t, d, r))
            batch = assemble(parts, plant.n, plant.m, r, d)
            if rank_ok(batch, schedule.rank_tol):
                break
        else:
            trace.message = (f"iteration {i}: rank "
                             f"{numerical_rank(batch, schedule.rank_tol)} "
                             f"< {batch.unknowns} after "
                             f"{schedule.window_factor} windows")
            raise LearningTimeoutError(trace.message)
        iterate = online_step(batch, p_prev, c, opts)
        step = float(np.linalg.norm(iterate.p - p_prev))
        trace.records.append(IterationRecord(
            i=i, p=np.array(iterate.p), K_next=np.array(iterate.K_next),
            objective=iterate.objective, status=iterate.status,
            step_norm=step, residual=iterate.residual,
            rank=numerical_rank(batch, schedule.rank_tol)))
        p_prev = np.array(iterate.p)
        u = Policy(plant.n, d, iterate.K_next)
        if step <= eps:
            trace.converged = True
            trace.message = f"converged after {i} iterations"
            return trace
    trace.message = (f"step norm above {eps} after {schedule.max_iter} "
                     f"iterations")
    return trace
