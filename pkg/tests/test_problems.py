from pathlib import Path

import numpy as np
import pytest

from polypi.problems import ValidationError, build_problem, load_problem

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


def scalar_doc(**overrides):
    doc = {
        "system": {"n": 1, "m": 1, "f": ["0.01*x1^2"], "g": [["1"]]},
        "cost": {"q": "0.01*x1^2 + 0.01*x1^4", "R": [[1.0]]},
        "design": {"r": 2, "omega_lo": [-1.0], "omega_hi": [1.0]},
        "init": {"v0": "10*x1^2 + 10*x1^4", "u1": ["-0.1*x1 - 0.1*x1^3"]},
    }
    for key, val in overrides.items():
        section, _, name = key.partition(".")
        if name:
            doc[section][name] = val
        else:
            doc[section] = val
    return doc


class TestLoadBundled:
    @pytest.mark.parametrize("name", ["scalar_a", "planar_b", "fourstate_c",
                                      "lqr_toy", "integrator_toy"])
    def test_bundled_files_load(self, name):
        prob = load_problem(PROBLEMS / f"{name}.toml")
        assert prob.name == name
        assert prob.u1.m == prob.m

    def test_scalar_a_resolution(self):
        prob = load_problem(PROBLEMS / "scalar_a.toml")
        assert (prob.n, prob.m, prob.r, prob.d) == (1, 1, 2, 3)
        assert prob.learning is not None
        assert prob.learning.noise.m == 1
        assert prob.reference is not None
        # closed form at x = 0: zero by construction
        assert prob.reference(np.zeros(1)) == pytest.approx(0.0, abs=1e-15)

    def test_planar_b_family(self):
        prob = load_problem(PROBLEMS / "planar_b.toml")
        assert prob.family is not None
        assert len(list(prob.family.param_box.vertices())) == 4
        assert prob.v0 is None  # search
        assert prob.system is not None  # true plant instantiated

    def test_fourstate_c_vertices(self):
        prob = load_problem(PROBLEMS / "fourstate_c.toml")
        assert len(list(prob.family.param_box.vertices())) == 32
        assert len(prob.u1.basis) == 34


class TestValidation:
    def test_degree_bound_computed(self):
        prob = build_problem(scalar_doc())
        assert prob.d == 3

    def test_degree_override_below_bound_rejected(self):
        with pytest.raises(ValidationError, match="design.d"):
            build_problem(scalar_doc(**{"design.d": 2}))

    def test_missing_field_names_path(self):
        doc = scalar_doc()
        del doc["cost"]["R"]
        with pytest.raises(ValidationError, match="cost.R"):
            build_problem(doc)

    def test_asymmetric_R_rejected_before_solving(self):
        doc = scalar_doc(**{"system.m": 2, "system.g": [["1", "0"]],
                            "cost.R": [[1.0, 0.5], [0.0, 1.0]],
                            "init.u1": ["-0.1*x1", "0"]})
        with pytest.raises(ValidationError, match="symmetric"):
            build_problem(doc)

    def test_indefinite_R_rejected(self):
        with pytest.raises(ValidationError, match="positive definite"):
            build_problem(scalar_doc(**{"cost.R": [[-1.0]]}))

    def test_constant_term_in_f_rejected(self):
        with pytest.raises(ValidationError, match="constant term"):
            build_problem(scalar_doc(**{"system.f": ["0.01*x1^2 + 1"]}))

    def test_q_with_linear_term_rejected(self):
        with pytest.raises(ValidationError, match="origin"):
            build_problem(scalar_doc(**{"cost.q": "x1 + x1^2"}))

    def test_omega_must_contain_origin(self):
        with pytest.raises(ValidationError, match="origin"):
            build_problem(scalar_doc(**{"design.omega_lo": [0.5]}))

    def test_policy_degree_overflow(self):
        with pytest.raises(ValidationError, match="init.u1"):
            build_problem(scalar_doc(**{"init.u1": ["-0.1*x1^5"]}))

    def test_search_requires_parameter_box(self):
        with pytest.raises(ValidationError, match="init.v0"):
            build_problem(scalar_doc(**{"init.v0": "search"}))

    def test_unknown_variable_in_polynomial(self):
        with pytest.raises(ValidationError, match="system.f"):
            build_problem(scalar_doc(**{"system.f": ["0.01*y^2"]}))

    def test_unknown_reference_rejected(self):
        doc = scalar_doc()
        doc["reference"] = {"name": "nope"}
        with pytest.raises(ValidationError, match="reference.name"):
            build_problem(doc)

    def test_nonaffine_parameters_rejected(self):
        doc = scalar_doc(**{
            "system.params": 1,
            "system.f": ["b1^2*x1^2"],
            "system.param_lo": [0.5],
            "system.param_hi": [1.0],
        })
        with pytest.raises(ValidationError, match="non-affinely"):
            build_problem(doc)

    def test_noise_channel_count_must_match_inputs(self):
        doc = scalar_doc()
        doc["learning"] = {"x0": [1.0], "window": 1.0, "dt": 0.25,
                           "noise": [[[0.1, 1.0, 0.0]], [[0.1, 2.0, 0.0]]]}
        with pytest.raises(ValidationError, match="learning.noise"):
            build_problem(doc)

    def test_not_toml(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[system\nn=1")
        with pytest.raises(ValidationError, match="TOML"):
            load_problem(bad)
