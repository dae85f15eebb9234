import math

import numpy as np
import pytest

from polypi.poly import Box, Polynomial, basis, box_integral
from polypi.sdp import SolverOptions
from polypi.systems import CostSpec, Policy, PolyFamily, PolySystem, ValueFn
from polypi.pi import (InfeasibleProgramError, InitialPolicyError,
                       degree_bound, hamiltonian, l_operator, omega_grid,
                       policy_eval_sos, policy_improve,
                       policy_update_identity_residual, robust_feasible_v0,
                       run_pi)

x = Polynomial.variable(1, 0)


def scalar_system(f, g=1.0):
    return PolySystem.single_input([f], [Polynomial.constant(1, g)])


def quad_cost(q, R=1.0):
    return CostSpec(q=q, R=np.array([[R]]))


class TestLOperator:
    def test_scalar_benchmark_at_one(self, scalar_cfg):
        sys, cost, V0, u1, _ = scalar_cfg
        L = l_operator(V0, u1, sys, cost)
        assert L(np.array([1.0])) == pytest.approx(11.34)
        assert L.degree == 6

    def test_simple_linear(self):
        sys = scalar_system(-x)
        L = l_operator(x ** 2, [Polynomial.zero(1)], sys, quad_cost(x ** 2))
        assert L == x ** 2

    def test_zero_value_zero_policy(self):
        sys = scalar_system(-x)
        cost = quad_cost(x ** 2)
        L = l_operator(Polynomial.zero(1), [Polynomial.zero(1)], sys, cost)
        assert L == -cost.q

    def test_dimension_mismatch(self):
        sys = scalar_system(-x)
        with pytest.raises(ValueError):
            l_operator(x ** 2, [x, x], sys, quad_cost(x ** 2))


class TestHamiltonian:
    def test_pure_integrator_exact_solution(self):
        sys = scalar_system(Polynomial.zero(1))
        assert hamiltonian(x ** 2, sys, quad_cost(x ** 2)).is_zero()

    def test_scalar_riccati(self):
        sys = scalar_system(-x)
        alpha = math.sqrt(2.0) - 1.0
        H = hamiltonian(alpha * x ** 2, sys, quad_cost(x ** 2))
        assert all(abs(c) < 1e-12 for c in H.terms.values())

    def test_initial_value_subsolution_on_grid(self, scalar_cfg):
        sys, cost, V0, _, omega = scalar_cfg
        H = hamiltonian(V0, sys, cost)
        assert all(H(pt) <= 1e-9 for pt in omega.grid(101))


class TestPolicyImprove:
    def test_linear_quadratic(self):
        sys = scalar_system(Polynomial.zero(1))
        u = policy_improve(x ** 2, sys, quad_cost(x ** 2), d=3)
        np.testing.assert_allclose(u.K, [[-1.0, 0.0, 0.0]])

    def test_two_input_identity(self):
        x1, x2 = (Polynomial.variable(2, i) for i in range(2))
        zero = Polynomial.zero(2)
        one = Polynomial.constant(2, 1.0)
        sys = PolySystem((zero, zero), ((one, zero), (zero, one)))
        cost = CostSpec(q=x1 ** 2 + x2 ** 2, R=np.eye(2))
        u = policy_improve(x1 ** 2 + x2 ** 2, sys, cost, d=1)
        np.testing.assert_allclose(u.K, [[-1.0, 0.0], [0.0, -1.0]])

    def test_reported_converged_value(self, scalar_cfg):
        # u = -1/2 R^-1 g' gradV halves the gradient coefficients; the
        # benchmark's published policy digits correspond to the doubled
        # (gradient) convention, so they are not asserted here.
        sys, cost, _, _, _ = scalar_cfg
        Vstar = 0.1020 * x ** 2 + 0.007 * x ** 3 + 0.0210 * x ** 4
        u = policy_improve(Vstar, sys, cost, d=3)
        np.testing.assert_allclose(u.K, [[-0.1020, -0.0105, -0.0420]],
                                   atol=1e-12)

    def test_degree_overflow_names_monomial(self):
        sys = scalar_system(Polynomial.zero(1))
        with pytest.raises(ValueError, match="x1\\^3"):
            policy_improve(x ** 4, sys, quad_cost(x ** 2), d=2)


class TestDegreeBound:
    def test_scalar_benchmark(self, scalar_cfg):
        sys, cost, _, _, _ = scalar_cfg
        assert degree_bound(sys, cost, r=2) == 3

    def test_cubic_drift(self):
        sys = scalar_system(-x ** 3)
        assert degree_bound(sys, quad_cost(x ** 2), r=2) == 3

    def test_lqr(self):
        sys = scalar_system(-x)
        assert degree_bound(sys, quad_cost(x ** 2), r=1) == 1


class TestPolicyEval:
    def test_warm_start_never_increases_objective(self, scalar_cfg):
        sys, cost, V0, u1, omega = scalar_cfg
        c = box_integral(V0.basis, omega)
        out = policy_eval_sos(V0, u1, sys, cost, c)
        assert out.objective <= c @ V0.p + 1e-7
        assert out.objective < c @ V0.p  # strict progress from a loose V0

    def test_integrator_single_step_brute_force_oracle(self):
        # fixed policy u = -2x: feasible V = a x^2 needs
        # L = (2*2a - 1 - 4) x^2 SOS and (2 - a) x^2 SOS -> a in [1.25, 2];
        # the box integral is increasing in a, so the optimum is a = 1.25.
        sys = scalar_system(Polynomial.zero(1))
        cost = quad_cost(x ** 2)
        V_prev = ValueFn.from_polynomial(2 * x ** 2, r=1)
        u = Policy.from_polynomials([-2 * x], d=1)
        c = box_integral(V_prev.basis, Box((-1.0,), (1.0,)))
        sweep = [a for a in np.linspace(0, 3, 3001)
                 if 4 * a - 5 >= 0 and 2 - a >= 0]
        assert min(sweep) == pytest.approx(1.25, abs=1e-3)
        out = policy_eval_sos(V_prev, u, sys, cost, c)
        assert out.value.p[0] == pytest.approx(1.25, abs=1e-6)

    def test_iteration_reaches_exact_hjb_solution(self):
        # the full loop from (2x^2, -2x) contracts onto V = x^2
        sys = scalar_system(Polynomial.zero(1))
        cost = quad_cost(x ** 2)
        V0 = ValueFn.from_polynomial(2 * x ** 2, r=1)
        u1 = Policy.from_polynomials([-2 * x], d=1)
        trace = run_pi(sys, cost, V0, u1, r=1, omega=Box((-1.0,), (1.0,)),
                       eps=1e-9, max_iter=20)
        assert trace.converged
        assert trace.records[-1].p[0] == pytest.approx(1.0, abs=1e-6)


class TestRunPi:
    def test_scalar_benchmark_convergence(self, scalar_cfg, scalar_vstar):
        sys, cost, V0, u1, omega = scalar_cfg
        trace = run_pi(sys, cost, V0, u1, r=2, omega=omega, eps=1e-3,
                       max_iter=10)
        assert trace.converged
        assert len(trace.records) <= 10
        xs = np.linspace(-1, 1, 101)
        V = trace.final_value(1, 2)
        err = max(abs(V(np.array([xv])) - scalar_vstar(xv)) for xv in xs)
        assert err <= 0.01

    def test_objective_non_increasing(self, scalar_cfg):
        sys, cost, V0, u1, omega = scalar_cfg
        trace = run_pi(sys, cost, V0, u1, r=2, omega=omega, eps=1e-3,
                       max_iter=10)
        objs = trace.objectives()
        assert all(b <= a + 1e-7 for a, b in zip(objs, objs[1:]))

    def test_pointwise_monotone_and_sandwich(self, scalar_cfg, scalar_vstar):
        sys, cost, V0, u1, omega = scalar_cfg
        trace = run_pi(sys, cost, V0, u1, r=2, omega=omega, eps=1e-3,
                       max_iter=10)
        rng = np.random.default_rng(0)
        pts = np.concatenate([omega.sample(rng, 500),
                              rng.uniform(-5, 5, size=(500, 1))])
        values = [V0] + trace.values(1, 2)
        for prev, cur in zip(values, values[1:]):
            for pt in pts:
                assert cur(pt) <= prev(pt) + 1e-6
        for pt in pts:
            assert trace.final_value(1, 2)(pt) >= scalar_vstar(pt[0]) - 1e-4

    def test_hamiltonian_sign_along_iterates(self, scalar_cfg):
        sys, cost, V0, u1, omega = scalar_cfg
        trace = run_pi(sys, cost, V0, u1, r=2, omega=omega, eps=1e-3,
                       max_iter=10)
        assert all(rec.h_max <= 1e-6 for rec in trace.records)

    def test_update_identity_each_iteration(self, scalar_cfg):
        sys, cost, V0, u1, omega = scalar_cfg
        trace = run_pi(sys, cost, V0, u1, r=2, omega=omega, eps=1e-3,
                       max_iter=10)
        u_prev = u1
        for rec in trace.records:
            V = ValueFn(1, 2, rec.p)
            u_next = Policy(1, 3, rec.K_next)
            res = policy_update_identity_residual(V, u_prev, u_next, sys, cost)
            assert res <= 1e-9
            u_prev = u_next

    def test_infinite_threshold_single_iteration(self, scalar_cfg):
        sys, cost, V0, u1, omega = scalar_cfg
        trace = run_pi(sys, cost, V0, u1, r=2, omega=omega, eps=math.inf,
                       max_iter=10)
        assert trace.converged and len(trace.records) == 1

    def test_bad_initial_pair_rejected(self):
        sys = scalar_system(x)  # unstable drift
        cost = quad_cost(x ** 2)
        V0 = ValueFn.from_polynomial(x ** 2, r=1)
        u1 = Policy.from_polynomials([Polynomial.zero(1)], d=1)
        with pytest.raises(InitialPolicyError):
            run_pi(sys, cost, V0, u1, r=1, omega=Box((-1.0,), (1.0,)),
                   eps=1e-3, max_iter=5)

    def test_omega_must_contain_origin(self, scalar_cfg):
        sys, cost, V0, u1, _ = scalar_cfg
        with pytest.raises(ValueError, match="origin"):
            run_pi(sys, cost, V0, u1, r=2, omega=Box((0.5,), (1.0,)),
                   eps=1e-3, max_iter=5)


class TestCostOverestimate:
    def test_value_bounds_simulated_cost(self, scalar_cfg):
        # integrate r(x, u) along the closed loop from grid starts; every
        # trajectory cost must stay below the certified value bound
        sys, cost, V0, u1, omega = scalar_cfg
        trace = run_pi(sys, cost, V0, u1, r=2, omega=omega, eps=1e-3,
                       max_iter=10)
        V = trace.final_value(1, 2)
        u = trace.final_policy(1, 3)
        field = sys.closed_loop_field(u.polynomials())[0]
        run_cost = cost.running_cost(u.polynomials())
        for x0 in (-1.0, -0.6, 0.6, 1.0):
            state = x0
            J = 0.0
            h = 1e-3
            for _ in range(200_000):
                k1 = field(np.array([state]))
                c1 = run_cost(np.array([state]))
                k2 = field(np.array([state + 0.5 * h * k1]))
                k3 = field(np.array([state + 0.5 * h * k2]))
                k4 = field(np.array([state + h * k3]))
                mid = state + 0.5 * h * k1
                c2 = run_cost(np.array([mid]))
                end = state + h * k4
                state = state + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                J += h / 6 * (c1 + 4 * c2 + run_cost(np.array([end])))
                if V(np.array([state])) < 1e-7:
                    break
            assert J <= V(np.array([x0])) * 1.01 + 1e-6


class TestLyapunovDecrease:
    def test_value_decreases_along_closed_loops(self, scalar_cfg):
        from polypi.sim import NoiseSpec, integrate
        sys, cost, V0, u1, omega = scalar_cfg
        trace = run_pi(sys, cost, V0, u1, r=2, omega=omega, eps=1e-3,
                       max_iter=10)
        V = trace.final_value(1, 2)
        u = trace.final_policy(1, 3)
        rng = np.random.default_rng(3)
        for x0 in rng.uniform(-2.0, 2.0, size=20):
            traj = integrate(sys, cost, u, NoiseSpec.zero(1),
                             [float(x0)], (0.0, 5.0))
            vals = np.array([V(pt) for pt in traj.x[::50]])
            assert np.all(np.diff(vals) <= 1e-9)


class TestIndependentSolverOracle:
    def test_first_evaluation_sdp_agrees_across_backends(self, scalar_cfg):
        # the same compiled SDP through two unrelated conic solvers
        from polypi.pi import _evaluation_program
        from polypi.sos import compile_sos
        from polypi.sdp import solve
        sys, cost, V0, u1, omega = scalar_cfg
        c = box_integral(V0.basis, omega)
        sdp = compile_sos(_evaluation_program(V0, u1, sys, cost, c)).sdp
        a = solve(sdp, SolverOptions(backend="clarabel"))
        b = solve(sdp, SolverOptions(backend="scs", feas_tol=1e-7,
                                     gap_tol=1e-7, max_iter=200_000))
        assert a.status == b.status == "optimal"
        assert a.primal_objective == pytest.approx(b.primal_objective,
                                                   abs=1e-5)
        assert a.primal_objective < c @ V0.p  # strict progress


class TestRobustFeasibility:
    def test_stable_linear_single_vertex(self):
        names =("x1", "b1")
        from polypi.poly import parse_poly
        family = PolyFamily(
            n=1,
            f=(parse_poly("-x1", 2, names),),
            g=((Polynomial.constant(2, 1.0),),),
            param_box=Box((1.0,), (1.0,)),
        )
        cost = quad_cost(x ** 2)
        u1 = Policy.from_polynomials([Polynomial.zero(1)], d=1)
        V, certs = robust_feasible_v0(family, u1, cost, r=1)
        assert len(certs) == 2  # one vertex + the margin constraint
        assert V.p[0] >= 0.5 - 1e-6  # L = (2a - 1) x^2 needs a >= 1/2

    def test_unstable_family_infeasible(self):
        names = ("x1", "b1")
        from polypi.poly import parse_poly
        family = PolyFamily(
            n=1,
            f=(parse_poly("x1", 2, names),),
            g=((Polynomial.zero(2),),),  # no control authority
            param_box=Box((1.0,), (1.0,)),
        )
        cost = quad_cost(x ** 2)
        u1 = Policy.from_polynomials([Polynomial.zero(1)], d=1)
        with pytest.raises(InfeasibleProgramError):
            robust_feasible_v0(family, u1, cost, r=1)

    def test_nonaffine_parameters_rejected(self):
        names = ("x1", "b1")
        from polypi.poly import parse_poly
        with pytest.raises(ValueError, match="non-affinely"):
            PolyFamily(n=1,
                       f=(parse_poly("b1^2*x1", 2, names),),
                       g=((Polynomial.zero(2),),),
                       param_box=Box((0.5,), (1.0,)))

    def test_planar_family_feasible_and_iterates(self, planar_cfg):
        family, cost, u1, omega = planar_cfg
        V0, _ = robust_feasible_v0(family, u1, cost, r=2)
        # the found V0 certifies every vertex; iterate the true plant
        sys = family.instantiate((0.7, 0.6))
        trace = run_pi(sys, cost, V0, u1, r=2, omega=omega, eps=1e-4,
                       max_iter=8)
        objs = trace.objectives()
        assert all(b <= a + 1e-7 for a, b in zip(objs, objs[1:]))
        V_final = trace.final_value(2, 2)
        for pt in omega.grid(11):
            assert V_final(pt) <= V0(pt) + 1e-6
