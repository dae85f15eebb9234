"""Fixed-step closed-loop simulation with embedded data quadratures.

The loop integrates  xdot = f + g(u + e)  with classical RK4 and, when data
collection is on, carries the learning integrands as extra quadrature states:
the monomial channel m_{2,2d}(x), the excitation channel m_{1,d}(x) (x) (R e),
and the running cost r(x, u).  Sharing the stepper puts the trajectory and
every interval integral on one error budget, which is what the online data
identity is tested against.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .poly import MonomialBasis, Polynomial, basis
from .systems import CostSpec, Policy, PolySystem


class FiniteEscapeError(RuntimeError):
    def __init__(self, t: float, norm: float):
        self.t = t
        super().__init__(f"state norm {norm:.3e} exceeded the blow-up guard "
                         f"at t = {t:.6f}")


@dataclass(frozen=True)
class NoiseSpec:
    """Sum-of-sinusoids exploration input per channel, active on [0, t_off]."""

    channels: tuple[tuple[tuple[float, float, float], ...], ...]
    t_off: float = math.inf

    @property
    def m(self) -> int:
        return len(self.channels)

    def __call__(self, t: float) -> np.ndarray:
        out = np.zeros(self.m)
        if t >= self.t_off:
            return out
        for j, terms in enumerate(self.channels):
            out[j] = sum(a * math.sin(w * t + ph) for a, w, ph in terms)
        return out

    def is_zero(self) -> bool:
        return all(not terms or all(a == 0.0 for a, _, _ in terms)
                   for terms in self.channels)

    @staticmethod
    def zero(m: int) -> "NoiseSpec":
        return NoiseSpec(channels=((),) * m)

    def with_phases(self, rng: np.random.Generator) -> "NoiseSpec":
        """Randomize phases, keeping amplitudes and frequencies."""
        return NoiseSpec(channels=tuple(
            tuple((a, w, float(rng.uniform(0.0, 2.0 * math.pi)))
                  for a, w, _ in terms) for terms in self.channels),
            t_off=self.t_off)


@dataclass(frozen=True)
class StepControl:
    h: float = 1e-3
    blowup: float = 1e6

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("step size must be positive")


@dataclass
class Trajectory:
    """Uniform-grid samples plus cumulative quadrature channels."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    cost: np.ndarray                      # cumulative integral of r(x, u)
    sigma: np.ndarray | None = None       # cumulative data channels
    data_degree: int | None = None

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    def write_csv(self, path):
        n, m = self.x.shape[1], self.u.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x{i + 1}" for i in range(n)]
                            + [f"u{j + 1}" for j in range(m)])
            for k in range(len(self.t)):
                writer.writerow([repr(float(self.t[k]))]
                                + [repr(float(v)) for v in self.x[k]]
                                + [repr(float(v)) for v in self.u[k]])


@dataclass(frozen=True)
class IntervalQuadratures:
    """One sampling interval of the learning data stream."""

    t0: float
    t1: float
    sigma: np.ndarray        # integral of -[m_{2,2d}; 2 m_{1,d} (x) Re] dt
    cost: float              # integral of r(x, u) dt
    v_basis_diff: np.ndarray  # m_{2,2r}(x(t1)) - m_{2,2r}(x(t0))


class _CompiledLoop:
    """Monomial-table evaluation of every per-step quantity."""

    def __init__(self, sys: PolySystem, cost: CostSpec, policy: Policy,
                 data_degree: int | None):
        n, m = sys.n, sys.m
        polys: list[Polynomial] = list(sys.f) + [e for row in sys.g for e in row]
        polys.append(cost.q)
        exps: set = set()
        for p in polys:
            exps |= set(p.terms)
        exps |= set(policy.basis.exps)
        self.basis_2d = self.basis_1d = None
        if data_degree is not None:
            self.basis_2d = basis(n, 2, 2 * data_degree)
            self.basis_1d = basis(n, 1, data_degree)
            exps |= set(self.basis_2d.exps)
            exps |= set(self.basis_1d.exps)
        order = sorted(exps)
        index = {e: i for i, e in enumerate(order)}
        self.E = np.array(order, dtype=float)

        def row(p: Polynomial) -> np.ndarray:
            out = np.zeros(len(order))
            for e, c in p.terms.items():
                out[index[e]] = c
            return out

        self.F = np.stack([row(p) for p in sys.f])
        self.G = np.stack([row(sys.g[i][j]) for i in range(n)
                           for j in range(m)]).reshape(n, m, -1)
        self.qv = row(cost.q)
        self.pol_idx = np.array([index[e] for e in policy.basis.exps])
        if data_degree is not None:
            self.idx_2d = np.array([index[e] for e in self.basis_2d.exps])
            self.idx_1d = np.array([index[e] for e in self.basis_1d.exps])
        self.K = policy.K
        self.R = cost.R
        self.n, self.m = n, m

    def monomials(self, x: np.ndarray) -> np.ndarray:
        return np.prod(x[None, :] ** self.E, axis=1)

    def control(self, mono: np.ndarray) -> np.ndarray:
        return self.K @ mono[self.pol_idx]

    def rates(self, x: np.ndarray, e: np.ndarray):
        """State derivative, data-channel integrand, cost integrand."""
        mono = self.monomials(x)
        u = self.control(mono)
        dx = self.F @ mono + np.einsum("ijk,k,j->i", self.G, mono, u + e)
        dc = float(self.qv @ mono + u @ self.R @ u)
        ds = None
        if self.basis_2d is not None:
            ds = -np.concatenate([mono[self.idx_2d],
                                  2.0 * np.kron(mono[self.idx_1d], self.R @ e)])
        return dx, ds, dc, u


def integrate(sys: PolySystem, cost: CostSpec, policy: Policy,
              noise: NoiseSpec, x0, t_span: tuple[float, float],
              step: StepControl = StepControl(),
              data_degree: int | None = None) -> Trajectory:
    """Classical RK4 over [t0, t1] with the quadratures as augmented states.

    Raises FiniteEscapeError when the state norm passes the blow-up guard.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 <= t0:
        raise ValueError("empty time span")
    num = int(round((t1 - t0) / step.h))
    if abs(t0 + num * step.h - t1) > 1e-9 * max(1.0, abs(t1)):
        raise ValueError("span must be a whole number of steps")
    loop = _CompiledLoop(sys, cost, policy, data_degree)
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (sys.n,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({sys.n},)")

    ts = t0 + step.h * np.arange(num + 1)
    xs = np.empty((num + 1, sys.n))
    us = np.empty((num + 1, sys.m))
    costs = np.empty(num + 1)
    sig_len = 0
    if data_degree is not None:
        sig_len = len(loop.basis_2d) + sys.m * len(loop.basis_1d)
    sigmas = np.empty((num + 1, sig_len)) if data_degree is not None else None

    c_acc = 0.0
    s_acc = np.zeros(sig_len)
    h = step.h
    for k in range(num + 1):
        t = ts[k]
        dx1, ds1, dc1, u_now = loop.rates(x, noise(t))
        xs[k] = x
        us[k] = u_now
        costs[k] = c_acc
        if sigmas is not None:
            sigmas[k] = s_acc
        if k == num:
            break
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > step.blowup:
            raise FiniteEscapeError(t, float(np.max(np.abs(x))))
        dx2, ds2, dc2, _ = loop.rates(x + 0.5 * h * dx1, noise(t + 0.5 * h))
        dx3, ds3, dc3, _ = loop.rates(x + 0.5 * h * dx2, noise(t + 0.5 * h))
        dx4, ds4, dc4, _ = loop.rates(x + h * dx3, noise(t + h))
        x = x + (h / 6.0) * (dx1 + 2.0 * dx2 + 2.0 * dx3 + dx4)
        c_acc += (h / 6.0) * (dc1 + 2.0 * dc2 + 2.0 * dc3 + dc4)
        if sigmas is not None:
            s_acc = s_acc + (h / 6.0) * (ds1 + 2.0 * ds2 + 2.0 * ds3 + ds4)
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > step.blowup:
        raise FiniteEscapeError(ts[-1], float(np.max(np.abs(x))))

    return Trajectory(t=ts, x=xs, u=us, cost=costs, sigma=sigmas,
                      data_degree=data_degree)


def collect_intervals(traj: Trajectory, delta_t: float,
                      r: int) -> list[IntervalQuadratures]:
    """Slice a data trajectory into contiguous learning intervals."""
    if traj.sigma is None:
        raise ValueError("trajectory carries no data channels; integrate with "
                         "data_degree set")
    h = traj.h
    per = int(round(delta_t / h))
    if per < 1 or abs(per * h - delta_t) > 1e-9 * max(1.0, delta_t):
        raise ValueError("interval length must be a positive multiple of the "
                         "integration step")
    total = len(traj.t) - 1
    count = total // per
    if count < 1:
        raise ValueError("trajectory shorter than one sampling interval")
    vb = basis(traj.x.shape[1], 2, 2 * r)
    out = []
    for q in range(count):
        a, b = q * per, (q + 1) * per
        out.append(IntervalQuadratures(
            t0=float(traj.t[a]), t1=float(traj.t[b]),
            sigma=traj.sigma[b] - traj.sigma[a],
            cost=float(traj.cost[b] - traj.cost[a]),
            v_basis_diff=vb.evaluate(traj.x[b]) - vb.evaluate(traj.x[a])))
    return out


class OnlinePlant:
    """Stateful simulator handle that keeps the dynamics private.

    The learner sees dimensions, measured interval quadratures, and the
    trajectory samples; it never touches f or g.
    """

    def __init__(self, sys: PolySystem, cost: CostSpec, x0,
                 step: StepControl = StepControl(), t0: float = 0.0):
        self._sys = sys
        self._cost = cost
        self.n, self.m = sys.n, sys.m
        self.state = np.asarray(x0, dtype=float).copy()
        self.time = float(t0)
        self.step = step
        self.segments: list[Trajectory] = []

    def run_window(self, policy: Policy, noise: NoiseSpec, duration: float,
                   delta_t: float, data_degree: int, r: int
                   ) -> list[IntervalQuadratures]:
        traj = integrate(self._sys, self._cost, policy, noise, self.state,
                         (self.time, self.time + duration), self.step,
                         data_degree=data_degree)
        self.state = traj.x[-1].copy()
        self.time = float(traj.t[-1])
        self.segments.append(traj)
        return collect_intervals(traj, delta_t, r)

    def run_plain(self, policy: Policy, noise: NoiseSpec,
                  duration: float) -> Trajectory:
        traj = integrate(self._sys, self._cost, policy, noise, self.state,
                         (self.time, self.time + duration), self.step)
        self.state = traj.x[-1].copy()
        self.time = float(traj.t[-1])
        self.segments.append(traj)
        return traj

    def kick(self, impulse):
        """Instantaneous state jump (disturbance injection between windows)."""
        self.state = self.state + np.asarray(impulse, dtype=float)

    def full_trajectory(self) -> Trajectory:
        """Concatenation of every simulated segment."""
        if not self.segments:
            raise ValueError("nothing simulated yet")
        ts = [self.segments[0].t]
        xs = [self.segments[0].x]
        us = [self.segments[0].u]
        cs = [self.segments[0].cost]
        for seg in self.segments[1:]:
            ts.append(seg.t[1:])
            xs.append(seg.x[1:])
            us.append(seg.u[1:])
            cs.append(cs[-1][-1] + seg.cost[1:])
        return Trajectory(t=np.concatenate(ts), x=np.concatenate(xs),
                          u=np.concatenate(us), cost=np.concatenate(cs))


def closed_loop_cost(sys: PolySystem, cost: CostSpec, policy: Policy, x0,
                     step: StepControl = StepControl(), t_max: float = 100.0,
                     tail_bound: float | None = None,
                     rel_tail: float = 0.01) -> float:
    """Quadrature of the running cost along the noise-free closed loop.

    Integrates until the remaining-cost bound (a value function evaluated at
    the current state, when supplied) falls under ``rel_tail`` of the
    accumulated cost, or until t_max.
    """
    noise = NoiseSpec.zero(sys.m)
    chunk = 5.0
    total = 0.0
    state = np.asarray(x0, dtype=float)
    t = 0.0
    while t < t_max:
        traj = integrate(sys, cost, policy, noise, state, (t, t + chunk), step)
        total += float(traj.cost[-1])
        state = traj.x[-1]
        t += chunk
        if tail_bound is not None:
            if tail_bound(state) <= rel_tail * max(total, 1e-12):
                break
        elif float(np.max(np.abs(state))) < 1e-8:
            break
    return total
