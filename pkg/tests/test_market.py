import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacinglab.market import (
    InstanceFormatError,
    MarketInstance,
    SolverConfig,
    generate_complete_graph,
    load_instance,
    save_instance,
    validate_instance,
)


class TestValidate:
    def test_well_formed(self):
        inst = MarketInstance([[1.0, 0.5], [0.0, 2.0]], [1.0, 3.0])
        assert validate_instance(inst) == []

    def test_zero_budget_flagged(self):
        inst = MarketInstance([[1.0, 0.5], [0.0, 2.0]], [0.0, 3.0])
        violations = validate_instance(inst)
        assert len(violations) == 1
        assert "budgets[0]" in violations[0]

    def test_negative_value_flagged(self):
        inst = MarketInstance([[-1.0, 0.5], [0.0, 2.0]], [1.0, 3.0])
        violations = validate_instance(inst)
        assert len(violations) == 1
        assert "values[0][0]" in violations[0]

    def test_budget_length_mismatch(self):
        inst = MarketInstance([[1.0], [2.0]], [1.0, 2.0, 3.0])
        assert any("budgets" in v for v in validate_instance(inst))

    def test_nan_rejected(self):
        inst = MarketInstance([[np.nan]], [1.0])
        assert validate_instance(inst)


class TestGenerator:
    def test_shapes_and_bounds(self):
        inst = generate_complete_graph(4, 6, seed=7, budget_scale=0.5)
        assert inst.values.shape == (4, 6)
        assert np.all(inst.values >= 0) and np.all(inst.values < 1)
        # budgets drawn from Uniform(0,1) * 0.5 * 6/4 = Uniform(0, 0.75)
        assert np.all(inst.budgets > 0) and np.all(inst.budgets < 0.75)

    def test_smallest_case(self):
        inst = generate_complete_graph(1, 1, seed=0, budget_scale=1.0)
        assert inst.values.shape == (1, 1)
        assert inst.budgets.shape == (1,)

    def test_deterministic(self):
        a = generate_complete_graph(5, 9, seed=42, budget_scale=0.5)
        b = generate_complete_graph(5, 9, seed=42, budget_scale=0.5)
        assert a == b
        assert a.values.tobytes() == b.values.tobytes()

    def test_budget_scale_linear(self):
        lo = generate_complete_graph(3, 5, seed=11, budget_scale=0.5)
        hi = generate_complete_graph(3, 5, seed=11, budget_scale=1.0)
        assert np.array_equal(lo.values, hi.values)
        assert np.allclose(hi.budgets, 2.0 * lo.budgets, rtol=0, atol=0)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            generate_complete_graph(0, 3, seed=0)
        with pytest.raises(ValueError):
            generate_complete_graph(3, 0, seed=0)


class TestRoundTrip:
    def test_fixture_round_trip(self, tmp_path, fx):
        inst = fx("value_increase_base")
        path = tmp_path / "copy.json"
        save_instance(inst, path)
        assert load_instance(path) == inst

    def test_awkward_floats_round_trip(self, tmp_path):
        inst = MarketInstance([[1 / 3, 1e-17], [0.1 + 0.2, 5e300]], [1e-12, 7.0])
        path = tmp_path / "awkward.json"
        save_instance(inst, path)
        again = load_instance(path)
        assert again == inst

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(1, 5), m=st.integers(1, 6), seed=st.integers(0, 10_000))
    def test_generated_round_trip(self, n, m, seed, tmp_path_factory):
        inst = generate_complete_graph(n, m, seed=seed)
        path = tmp_path_factory.mktemp("rt") / "inst.json"
        save_instance(inst, path)
        assert load_instance(path) == inst


class TestLoadErrors:
    def write(self, tmp_path, text):
        path = tmp_path / "bad.json"
        path.write_text(text)
        return path

    def test_malformed_json(self, tmp_path):
        with pytest.raises(InstanceFormatError, match="not valid JSON"):
            load_instance(self.write(tmp_path, "{values: oops"))

    def test_missing_field(self, tmp_path):
        with pytest.raises(InstanceFormatError, match="budgets"):
            load_instance(self.write(tmp_path, '{"values": [[1.0]]}'))

    def test_budget_count_mismatch(self, tmp_path):
        doc = {"values": [[1.0, 2.0], [3.0, 4.0]], "budgets": [1.0, 2.0, 3.0]}
        with pytest.raises(InstanceFormatError, match="3 entries for 2 bidders"):
            load_instance(self.write(tmp_path, json.dumps(doc)))

    def test_ragged_rows(self, tmp_path):
        doc = {"values": [[1.0, 2.0], [3.0]], "budgets": [1.0, 2.0]}
        with pytest.raises(InstanceFormatError, match="inconsistent"):
            load_instance(self.write(tmp_path, json.dumps(doc)))

    def test_invariant_violations_rejected(self, tmp_path):
        doc = {"values": [[-1.0]], "budgets": [1.0]}
        with pytest.raises(InstanceFormatError, match="values"):
            load_instance(self.write(tmp_path, json.dumps(doc)))
        doc = {"values": [[1.0]], "budgets": [0.0]}
        with pytest.raises(InstanceFormatError, match="budgets"):
            load_instance(self.write(tmp_path, json.dumps(doc)))

    def test_non_numeric(self, tmp_path):
        doc = {"values": [["zap"]], "budgets": [1.0]}
        with pytest.raises(InstanceFormatError):
            load_instance(self.write(tmp_path, json.dumps(doc)))


class TestTypes:
    def test_instance_arrays_read_only(self):
        inst = MarketInstance([[1.0]], [1.0])
        with pytest.raises(ValueError):
            inst.values[0, 0] = 2.0
        with pytest.raises(ValueError):
            inst.budgets[0] = 2.0

    def test_solver_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(tol_kkt=0.0)
        with pytest.raises(ValueError):
            SolverConfig(tie_epsilon=-1.0)
        with pytest.raises(ValueError):
            SolverConfig(step_rule="newton")
        with pytest.raises(ValueError):
            SolverConfig(max_iters=0)
