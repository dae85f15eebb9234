"""Model-based relaxed policy iteration.

Each sweep solves one convex policy-evaluation program

    min  c^T p   s.t.  L(V, u_i) is SOS,   V_{i-1} - V is SOS,

over V = p^T m_{2,2r}(x), where L(V, u) = -grad(V)^T (f + g u) - q - u^T R u,
then improves the policy explicitly by u = -1/2 R^{-1} g^T grad(V).  Feasible
iterates overestimate the optimal cost, decrease pointwise, and keep the loop
globally stabilizing, so the objective sequence is non-increasing until the
coefficient step falls under the caller's threshold.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .poly import Box, Polynomial, basis, box_integral, lie_derivative
from .sdp import NUMERICAL_FAILURE, OPTIMAL, SolverOptions
from .sos import (AffinePolynomial, DecisionVector, GramCertificate,
                  SosProgram, certify_sos, solve_sos)
from .systems import CostSpec, PolyFamily, Policy, PolySystem, ValueFn

# Positive-definiteness margin for the standalone feasibility search: the
# found V must dominate margin * sum x_i^2.  The iteration itself runs without
# it, faithful to the evaluation program above.
FEASIBILITY_MARGIN = 1e-6


class InitialPolicyError(ValueError):
    """The supplied (V0, u1) fail the certified stability precondition."""


class InfeasibleProgramError(RuntimeError):
    def __init__(self, message: str, solution=None):
        self.solution = solution
        super().__init__(message)


class PolicyIterationError(RuntimeError):
    """Iteration aborted mid-run; carries the trace up to the failure."""

    def __init__(self, message: str, trace: "IterationTrace"):
        self.trace = trace
        super().__init__(message)


def _value_poly(V) -> Polynomial:
    return V.polynomial() if isinstance(V, ValueFn) else V


def _policy_polys(u, m: int) -> list[Polynomial]:
    if isinstance(u, Policy):
        return u.polynomials()
    u = list(u)
    if len(u) != m:
        raise ValueError(f"policy has {len(u)} entries, expected {m}")
    return u


def l_operator(V, u, sys: PolySystem, cost: CostSpec) -> Polynomial:
    """L(V, u) = -grad(V)^T (f + g u) - q - u^T R u, exactly."""
    Vp = _value_poly(V)
    up = _policy_polys(u, sys.m)
    field_polys = sys.closed_loop_field(up)
    return -lie_derivative(Vp, field_polys) - cost.running_cost(up)


def hamiltonian(V, sys: PolySystem, cost: CostSpec) -> Polynomial:
    """H(V) = grad(V)^T f + q - 1/4 grad(V)^T g R^-1 g^T grad(V)."""
    Vp = _value_poly(V)
    grad = Vp.gradient()
    out = cost.q + lie_derivative(Vp, list(sys.f))
    w = [Polynomial.zero(sys.n) for _ in range(sys.m)]  # g^T grad(V)
    for k in range(sys.m):
        for i in range(sys.n):
            w[k] = w[k] + sys.g[i][k] * grad[i]
    Rinv = cost.R_inv()
    for a in range(sys.m):
        for b in range(sys.m):
            if Rinv[a, b] != 0.0:
                out = out - 0.25 * Rinv[a, b] * (w[a] * w[b])
    return out


def policy_improve(V, sys: PolySystem, cost: CostSpec, d: int) -> Policy:
    """u = -1/2 R^-1 g^T grad(V), written on the basis m_{1,d}(x).

    Raises if any entry contains a monomial outside that basis (the error
    names the offending monomial).
    """
    Vp = _value_poly(V)
    grad = Vp.gradient()
    w = [Polynomial.zero(sys.n) for _ in range(sys.m)]
    for k in range(sys.m):
        for i in range(sys.n):
            w[k] = w[k] + sys.g[i][k] * grad[i]
    Rinv = cost.R_inv()
    entries = []
    for j in range(sys.m):
        uj = Polynomial.zero(sys.n)
        for k in range(sys.m):
            if Rinv[j, k] != 0.0:
                uj = uj + (-0.5 * Rinv[j, k]) * w[k]
        entries.append(uj)
    return Policy.from_polynomials(entries, d)


def degree_bound(sys: PolySystem, cost: CostSpec, r: int) -> int:
    """Smallest d with 2d >= max{deg f + 2r-1, deg g + 2(2r-1), deg q,
    2(2r-1) + 2 deg g}."""
    if r < 1:
        raise ValueError("need r >= 1")
    df, dg, dq = sys.deg_f(), sys.deg_g(), cost.q.degree or 0
    need = max(df + 2 * r - 1, dg + 2 * (2 * r - 1), dq,
               2 * (2 * r - 1) + 2 * dg)
    return math.ceil(need / 2)


def policy_update_identity_residual(V_prev, u_prev, u_next, sys: PolySystem,
                                    cost: CostSpec) -> float:
    """Max coefficient of L(V,u') - L(V,u) - |u'-u|_R^2, which is identically
    zero when u' is the exact policy improvement of V."""
    du = [a - b for a, b in zip(_policy_polys(u_next, sys.m),
                                _policy_polys(u_prev, sys.m))]
    penalty = Polynomial.zero(sys.n)
    for a in range(sys.m):
        for b in range(sys.m):
            if cost.R[a, b] != 0.0:
                penalty = penalty + cost.R[a, b] * (du[a] * du[b])
    diff = (l_operator(V_prev, u_next, sys, cost)
            - l_operator(V_prev, u_prev, sys, cost) - penalty)
    return max((abs(c) for c in diff.terms.values()), default=0.0)


# ---------------------------------------------------------------------------
# Policy evaluation as an SOS program
# ---------------------------------------------------------------------------

def _evaluation_program(V_prev: ValueFn, u, sys: PolySystem, cost: CostSpec,
                        c: np.ndarray) -> SosProgram:
    vb = V_prev.basis
    decisions = DecisionVector.numbered("p", len(vb))
    up = _policy_polys(u, sys.m)
    field_polys = sys.closed_loop_field(up)
    run_cost = cost.running_cost(up)

    l_sens = {}
    diff_sens = {}
    for j, exp in enumerate(vb.exps):
        mono = Polynomial(sys.n, {exp: 1.0})
        l_sens[f"p{j}"] = -lie_derivative(mono, field_polys)
        diff_sens[f"p{j}"] = -mono
    return SosProgram(
        decisions=decisions,
        objective=np.asarray(c, dtype=float),
        sos_constraints=[
            AffinePolynomial(constant=-run_cost, sens=l_sens),
            AffinePolynomial(constant=V_prev.polynomial(), sens=diff_sens),
        ],
    )


@dataclass
class EvalOutcome:
    value: ValueFn
    certificates: list[GramCertificate]
    objective: float
    status: str


def policy_eval_sos(V_prev: ValueFn, u, sys: PolySystem, cost: CostSpec,
                    c: np.ndarray,
                    opts: SolverOptions = SolverOptions()) -> EvalOutcome:
    """One policy-evaluation solve; the previous value is always feasible, so
    a non-optimal status signals bad input or numerical failure."""
    program = _evaluation_program(V_prev, u, sys, cost, c)
    result = solve_sos(program, opts)
    if result.status == NUMERICAL_FAILURE:
        result = solve_sos(program, opts.loosened(10.0))
    if result.status != OPTIMAL:
        raise InfeasibleProgramError(
            f"policy evaluation returned {result.status!r}", result.solution)
    value = ValueFn(sys.n, V_prev.r, result.values)
    return EvalOutcome(value=value, certificates=result.certificates,
                       objective=float(result.solution.primal_objective),
                       status=result.status)


# ---------------------------------------------------------------------------
# Iteration loop and trace
# ---------------------------------------------------------------------------

@dataclass
class IterationRecord:
    i: int
    p: np.ndarray
    K_next: np.ndarray
    objective: float
    status: str
    step_norm: float
    h_max: float = math.nan
    residual: float | None = None
    rank: int | None = None


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    message: str = ""

    def objectives(self) -> list[float]:
        return [rec.objective for rec in self.records]

    def values(self, n: int, r: int) -> list[ValueFn]:
        return [ValueFn(n, r, rec.p) for rec in self.records]

    def policies(self, n: int, d: int) -> list[Policy]:
        return [Policy(n, d, rec.K_next) for rec in self.records]

    def final_value(self, n: int, r: int) -> ValueFn:
        return ValueFn(n, r, self.records[-1].p)

    def final_policy(self, n: int, d: int) -> Policy:
        return Policy(n, d, self.records[-1].K_next)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "objective", "step_norm", "status",
                             "h_max", "residual", "rank"])
            for rec in self.records:
                writer.writerow([rec.i, repr(rec.objective),
                                 repr(rec.step_norm), rec.status,
                                 repr(rec.h_max),
                                 "" if rec.residual is None else repr(rec.residual),
                                 "" if rec.rank is None else rec.rank])

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps({
                    "iter": rec.i,
                    "p": [float(v) for v in rec.p],
                    "K_next": np.asarray(rec.K_next).tolist(),
                    "objective": rec.objective,
                    "step_norm": rec.step_norm,
                    "status": rec.status,
                    "h_max": None if math.isnan(rec.h_max) else rec.h_max,
                    "residual": rec.residual,
                    "rank": rec.rank,
                }) + "\n")


def omega_grid(omega: Box, target: int = 1024) -> np.ndarray:
    """Deterministic sample grid over the performance box."""
    per_axis = max(3, int(round(target ** (1.0 / omega.n))))
    if omega.n == 1:
        per_axis = 101
    return omega.grid(per_axis)


def hamiltonian_max(V, sys: PolySystem, cost: CostSpec,
                    points: np.ndarray) -> float:
    H = hamiltonian(V, sys, cost)
    return float(max(H(pt) for pt in points))


def run_pi(sys: PolySystem, cost: CostSpec, V0: ValueFn, u1: Policy, r: int,
           omega: Box, eps: float, max_iter: int,
           opts: SolverOptions = SolverOptions(),
           grid_target: int = 1024) -> IterationTrace:
    """Run the relaxed policy iteration until |p_i - p_{i-1}| <= eps.

    Checks the stability precondition first by certifying L(V0, u1) as SOS;
    a mid-run solver failure truncates the trace and raises with it attached.
    """
    if V0.n != sys.n or V0.r != r:
        raise ValueError("V0 does not match the system/degree configuration")
    if u1.n != sys.n or u1.m != sys.m:
        raise ValueError("u1 does not match the system dimensions")
    omega.require_origin_interior("Omega")
    if omega.n != sys.n:
        raise ValueError("Omega dimension mismatch")

    precheck = certify_sos(l_operator(V0, u1, sys, cost), opts)
    if precheck is None:
        raise InitialPolicyError(
            "L(V0, u1) is not certifiably SOS; the initial pair must satisfy "
            "the stability precondition")

    c = box_integral(V0.basis, omega)
    grid = omega_grid(omega, grid_target)
    trace = IterationTrace()
    p_prev = np.array(V0.p)
    u = u1
    for i in range(1, max_iter + 1):
        try:
            outcome = policy_eval_sos(ValueFn(sys.n, r, p_prev), u, sys, cost,
                                      c, opts)
        except InfeasibleProgramError as err:
            trace.message = f"iteration {i}: {err}"
            raise PolicyIterationError(trace.message, trace) from err
        V_i = outcome.value
        u_next = policy_improve(V_i, sys, cost, u.d)
        step = float(np.linalg.norm(V_i.p - p_prev))
        trace.records.append(IterationRecord(
            i=i, p=np.array(V_i.p), K_next=np.array(u_next.K),
            objective=outcome.objective, status=outcome.status,
            step_norm=step, h_max=hamiltonian_max(V_i, sys, cost, grid)))
        p_prev = np.array(V_i.p)
        u = u_next
        if step <= eps:
            trace.converged = True
            trace.message = f"converged after {i} iterations"
            return trace
    trace.message = f"step norm above {eps} after {max_iter} iterations"
    return trace


# ---------------------------------------------------------------------------
# Robust initial feasibility over a parameter box
# ---------------------------------------------------------------------------

def robust_feasible_v0(family: PolyFamily, u1: Policy, cost: CostSpec, r: int,
                       opts: SolverOptions = SolverOptions(),
                       margin: float = FEASIBILITY_MARGIN
                       ) -> tuple[ValueFn, list[GramCertificate]]:
    """Find V with L(V, u1) SOS at every vertex of the parameter box.

    Affine parameter entry (validated by PolyFamily) makes the finitely many
    vertex constraints equivalent to the whole box.  This is a pure
    feasibility search: the interior-point solver lands on a well-centered V,
    which keeps the downstream evaluation programs comfortably strictly
    feasible.  The returned V also carries a positive-definiteness margin so
    it is a usable Lyapunov candidate on its own.
    """
    n = family.n
    vb = basis(n, 2, 2 * r)
    decisions = DecisionVector.numbered("p", len(vb))
    monos = [Polynomial(n, {exp: 1.0}) for exp in vb.exps]
    up = _policy_polys(u1, family.m)

    constraints = []
    for _, vertex_sys in family.vertex_systems():
        field_polys = vertex_sys.closed_loop_field(up)
        sens = {f"p{j}": -lie_derivative(monos[j], field_polys)
                for j in range(len(vb))}
        constraints.append(AffinePolynomial(
            constant=-cost.running_cost(up), sens=sens))

    norm2 = Polynomial(n, {tuple(2 if i == j else 0 for j in range(n)): 1.0
                           for i in range(n)})
    constraints.append(AffinePolynomial(
        constant=-margin * norm2,
        sens={f"p{j}": monos[j] for j in range(len(vb))}))

    program = SosProgram(decisions=decisions, objective=np.zeros(len(vb)),
                         sos_constraints=constraints)
    result = solve_sos(program, opts)
    if result.status == NUMERICAL_FAILURE:
        result = solve_sos(program, opts.loosened(10.0))
    if result.status != OPTIMAL:
        raise InfeasibleProgramError(
            f"no feasible V0 of degree {2 * r} over the parameter box "
            f"(status {result.status!r})", result.solution)
    return ValueFn(n, r, result.values), result.certificates
