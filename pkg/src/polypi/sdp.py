"""Block-diagonal SDP container, conic-solver contract, and text serialization.

The canonical problem is

    min  c^T z   s.t.  A z = b,   z = (svec(S_1), ..., svec(S_B), y_free),
    S_k symmetric positive semidefinite.

Symmetric blocks travel in scaled upper-triangular (svec) coordinates so that
inner products are preserved: off-diagonal entries carry a factor sqrt(2),
columns stacked left to right.

Solving is delegated to a pluggable conic backend; Clarabel (interior point)
is the default and SCS (operator splitting) is bundled as an alternative for
cross-checking.  Backends must be reentrant and deterministic for fixed
options.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sparse

SQRT2 = math.sqrt(2.0)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"


def svec_dim(d: int) -> int:
    return d * (d + 1) // 2


def svec(M: np.ndarray) -> np.ndarray:
    d = M.shape[0]
    out = np.empty(svec_dim(d))
    k = 0
    for j in range(d):
        for i in range(j + 1):
            out[k] = M[i, j] if i == j else SQRT2 * 0.5 * (M[i, j] + M[j, i])
            k += 1
    return out


def smat(v: np.ndarray, d: int) -> np.ndarray:
    M = np.empty((d, d))
    k = 0
    for j in range(d):
        for i in range(j + 1):
            if i == j:
                M[i, j] = v[k]
            else:
                M[i, j] = M[j, i] = v[k] / SQRT2
            k += 1
    return M


@dataclass(frozen=True)
class SdpProblem:
    """Sparse SDP data in canonical triplet form.

    Columns 0..sum(svec_dim(d)) cover the PSD blocks in order; the last
    ``num_free`` columns are free scalar variables.  ``entries`` holds the
    equality matrix as (row, col, value) triplets sorted by (row, col).
    """

    block_dims: tuple[int, ...]
    num_free: int
    num_rows: int
    entries: tuple[tuple[int, int, float], ...]
    rhs: tuple[float, ...]
    objective: tuple[float, ...]

    @property
    def num_svec(self) -> int:
        return sum(svec_dim(d) for d in self.block_dims)

    @property
    def num_cols(self) -> int:
        return self.num_svec + self.num_free

    def block_offsets(self) -> list[int]:
        offs = [0]
        for d in self.block_dims:
            offs.append(offs[-1] + svec_dim(d))
        return offs

    def eq_matrix(self) -> sparse.csc_matrix:
        if not self.entries:
            return sparse.csc_matrix((self.num_rows, self.num_cols))
        rows, cols, vals = zip(*self.entries)
        return sparse.csc_matrix((vals, (rows, cols)),
                                 shape=(self.num_rows, self.num_cols))

    def split(self, z: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        offs = self.block_offsets()
        blocks = [smat(z[offs[k]:offs[k + 1]], d)
                  for k, d in enumerate(self.block_dims)]
        return blocks, np.asarray(z[self.num_svec:])


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-7
    max_iter: int | None = None
    backend: str = "clarabel"
    scale_rows: bool = True
    verbose: bool = False

    def loosened(self, factor: float = 10.0) -> "SolverOptions":
        return replace(self, feas_tol=self.feas_tol * factor,
                       gap_tol=self.gap_tol * factor)


@dataclass
class SdpSolution:
    status: str
    blocks: list[np.ndarray] = field(default_factory=list)
    free: np.ndarray = field(default_factory=lambda: np.zeros(0))
    primal_objective: float = math.nan
    dual_objective: float = math.nan
    feas_residual: float = math.nan
    gap: float = math.nan
    backend: str = ""
    raw_status: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


class SolverFailure(RuntimeError):
    """Raised by callers that require an optimal solution and did not get one."""

    def __init__(self, solution: SdpSolution, message: str = ""):
        self.solution = solution
        super().__init__(message or f"solver returned status {solution.status!r} "
                                    f"(backend {solution.backend}, "
                                    f"raw {solution.raw_status})")


def _row_scales(A: sparse.csc_matrix, rows: int) -> np.ndarray:
    scales = np.ones(rows)
    if A.nnz:
        absA = abs(A).tocsr()
        maxima = absA.max(axis=1).toarray().ravel()
        nz = maxima > 0
        scales[nz] = maxima[nz]
    return scales


def _finalize(sdp: SdpProblem, z: np.ndarray, status: str, backend: str,
              raw_status: str, dual_obj: float, opts: SolverOptions) -> SdpSolution:
    c = np.array(sdp.objective)
    blocks, free = sdp.split(z)
    A = sdp.eq_matrix()
    b = np.array(sdp.rhs)
    residual = float(np.max(np.abs(A @ z - b))) if sdp.num_rows else 0.0
    pobj = float(c @ z)
    if np.any(c):
        gap = abs(pobj - dual_obj) / (1.0 + abs(pobj) + abs(dual_obj))
    else:
        gap = 0.0  # pure feasibility: any feasible point is optimal
    if status == OPTIMAL:
        if residual > opts.feas_tol or gap > opts.gap_tol:
            status = NUMERICAL_FAILURE
    return SdpSolution(status=status, blocks=blocks, free=free,
                       primal_objective=pobj, dual_objective=dual_obj,
                       feas_residual=residual, gap=gap, backend=backend,
                       raw_status=raw_status)


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

def _solve_clarabel(sdp: SdpProblem, opts: SolverOptions) -> SdpSolution:
    import clarabel

    ncols = sdp.num_cols
    A_eq = sdp.eq_matrix()
    b_eq = np.array(sdp.rhs)
    if opts.scale_rows and sdp.num_rows:
        scales = _row_scales(A_eq, sdp.num_rows)
        D = sparse.diags(1.0 / scales)
        A_eq = D @ A_eq
        b_eq = b_eq / scales

    cone_rows = [A_eq]
    cones = [clarabel.ZeroConeT(sdp.num_rows)] if sdp.num_rows else []
    b_parts = [b_eq]
    offs = sdp.block_offsets()
    for k, d in enumerate(sdp.block_dims):
        sel = sparse.lil_matrix((svec_dim(d), ncols))
        for j in range(svec_dim(d)):
            sel[j, offs[k] + j] = -1.0
        cone_rows.append(sel.tocsc())
        cones.append(clarabel.PSDTriangleConeT(d))
        b_parts.append(np.zeros(svec_dim(d)))

    A = sparse.vstack(cone_rows).tocsc()
    b = np.concatenate(b_parts)
    P = sparse.csc_matrix((ncols, ncols))
    q = np.array(sdp.objective)

    settings = clarabel.DefaultSettings()
    settings.verbose = opts.verbose
    # solve tighter than the acceptance tolerance so the recomputed residuals
    # on unscaled data still clear it
    settings.tol_feas = max(opts.feas_tol * 1e-2, 1e-12)
    settings.tol_gap_abs = max(opts.gap_tol * 1e-2, 1e-12)
    settings.tol_gap_rel = max(opts.gap_tol * 1e-2, 1e-12)
    if opts.max_iter is not None:
        settings.max_iter = opts.max_iter

    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    try:
        result = solver.solve()
    except (KeyboardInterrupt, SystemExit):
        raise
    except BaseException as err:  # pyo3 panics derive from BaseException
        return SdpSolution(status=NUMERICAL_FAILURE, backend="clarabel",
                           raw_status=f"panic: {err}")
    raw = str(result.status)

    S = {s: getattr(clarabel.SolverStatus, s) for s in dir(clarabel.SolverStatus)
         if not s.startswith("_")}
    if result.status in (S["Solved"], S["AlmostSolved"]):
        z = np.array(result.x)
        return _finalize(sdp, z, OPTIMAL, "clarabel", raw,
                         float(result.obj_val_dual), opts)
    if result.status in (S["PrimalInfeasible"], S["AlmostPrimalInfeasible"]):
        return SdpSolution(status=INFEASIBLE, backend="clarabel", raw_status=raw)
    if result.status in (S["DualInfeasible"], S["AlmostDualInfeasible"]):
        return SdpSolution(status=UNBOUNDED, backend="clarabel", raw_status=raw)
    return SdpSolution(status=NUMERICAL_FAILURE, backend="clarabel", raw_status=raw)


def _solve_scs(sdp: SdpProblem, opts: SolverOptions) -> SdpSolution:
    import scs

    ncols = sdp.num_cols
    A_eq = sdp.eq_matrix()
    b_eq = np.array(sdp.rhs)
    if opts.scale_rows and sdp.num_rows:
        scales = _row_scales(A_eq, sdp.num_rows)
        A_eq = sparse.diags(1.0 / scales) @ A_eq
        b_eq = b_eq / scales

    rows = [A_eq]
    b_parts = [b_eq]
    offs = sdp.block_offsets()
    for k, d in enumerate(sdp.block_dims):
        # scs packs the scaled LOWER triangle column-major; permute from our
        # upper-column-major svec layout
        sel = sparse.lil_matrix((svec_dim(d), ncols))
        for j in range(d):
            for i in range(j + 1):
                mine = svec_dim(j) + i
                theirs = i * d - i * (i - 1) // 2 + (j - i)
                sel[theirs, offs[k] + mine] = -1.0
        rows.append(sel.tocsc())
        b_parts.append(np.zeros(svec_dim(d)))

    data = dict(A=sparse.vstack(rows).tocsc(),
                b=np.concatenate(b_parts),
                c=np.array(sdp.objective))
    cone = dict(z=sdp.num_rows, s=list(sdp.block_dims))
    solver = scs.SCS(data, cone,
                     eps_abs=max(opts.feas_tol * 1e-2, 1e-10),
                     eps_rel=max(opts.gap_tol * 1e-2, 1e-10),
                     max_iters=opts.max_iter or 100_000,
                     verbose=opts.verbose)
    result = solver.solve()
    raw = result["info"]["status"]
    if "solved" in raw.lower() and "inaccurate" not in raw.lower():
        z = np.array(result["x"])
        return _finalize(sdp, z, OPTIMAL, "scs", raw,
                         float(result["info"]["dobj"]), opts)
    if "infeasible" in raw.lower():
        return SdpSolution(status=INFEASIBLE, backend="scs", raw_status=raw)
    if "unbounded" in raw.lower():
        return SdpSolution(status=UNBOUNDED, backend="scs", raw_status=raw)
    return SdpSolution(status=NUMERICAL_FAILURE, backend="scs", raw_status=raw)


_BACKENDS = {
    "clarabel": _solve_clarabel,
    "scs": _solve_scs,
}


def register_backend(name: str, solve_fn):
    """Plug an external conic solver in behind the same contract."""
    _BACKENDS[name] = solve_fn


def solve(sdp: SdpProblem, opts: SolverOptions = SolverOptions()) -> SdpSolution:
    """Solve a compiled SDP.

    Status is one of optimal / infeasible / unbounded / numerical-failure.
    When optimal, the recomputed equality residual is <= opts.feas_tol and the
    relative duality gap is <= opts.gap_tol; otherwise the status is
    downgraded rather than silently returned.
    """
    if opts.backend not in _BACKENDS:
        raise ValueError(f"unknown solver backend {opts.backend!r}; "
                         f"have {sorted(_BACKENDS)}")
    return _BACKENDS[opts.backend](sdp, opts)


# ---------------------------------------------------------------------------
# Sparse text serialization (for external cross-validation)
# ---------------------------------------------------------------------------

def serialize_sdp(sdp: SdpProblem) -> str:
    """Documented plain-text form: block dims, triplet equalities, objective.

    Lines:
        sdp v1
        blocks d1 d2 ...          PSD block dimensions (may be empty)
        free k                    number of free scalar columns
        rows m                    number of equality rows
        obj col value             one line per objective nonzero
        rhs row value             one line per right-hand-side nonzero
        ent row col value         one line per equality-matrix nonzero
    Columns index svec(blocks) then free variables; floats use repr.
    """
    lines = ["sdp v1",
             "blocks " + " ".join(str(d) for d in sdp.block_dims),
             f"free {sdp.num_free}",
             f"rows {sdp.num_rows}"]
    for j, v in enumerate(sdp.objective):
        if v != 0.0:
            lines.append(f"obj {j} {v!r}")
    for i, v in enumerate(sdp.rhs):
        if v != 0.0:
            lines.append(f"rhs {i} {v!r}")
    for (i, j, v) in sdp.entries:
        lines.append(f"ent {i} {j} {v!r}")
    return "\n".join(lines) + "\n"


def parse_sdp(text: str) -> SdpProblem:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "sdp v1":
        raise ValueError("not an sdp v1 document")
    block_dims = tuple(int(t) for t in lines[1].split()[1:])
    num_free = int(lines[2].split()[1])
    num_rows = int(lines[3].split()[1])
    num_cols = sum(svec_dim(d) for d in block_dims) + num_free
    objective = [0.0] * num_cols
    rhs = [0.0] * num_rows
    entries = []
    for ln in lines[4:]:
        tok = ln.split()
        if tok[0] == "obj":
            objective[int(tok[1])] = float(tok[2])
        elif tok[0] == "rhs":
            rhs[int(tok[1])] = float(tok[2])
        elif tok[0] == "ent":
            entries.append((int(tok[1]), int(tok[2]), float(tok[3])))
        else:
            raise ValueError(f"bad line: {ln!r}")
    return SdpProblem(block_dims=block_dims, num_free=num_free,
                      num_rows=num_rows, entries=tuple(entries),
                      rhs=tuple(rhs), objective=tuple(objective))
