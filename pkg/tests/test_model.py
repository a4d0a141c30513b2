import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ikpred.model import (
    InvalidScheduleError,
    Schedule,
    StateSpaceModel,
    WarmupConfig,
    load_model,
    load_schedule,
    model_from_dict,
    model_to_dict,
    regular_schedule,
    save_model,
    save_schedule,
    validate_model,
)


def scalar_model(**overrides):
    params = dict(
        A=[[1.0]], b=[0.0], G=[[1.0]], Q=[[1.0]], C=[[1.0]], d=[0.0],
        R=[[1.0]], x0_mean=[0.0], x0_cov=[[1.0]],
    )
    params.update(overrides)
    return StateSpaceModel(**params)


class TestValidateModel:
    def test_identity_scalar_model_ok(self):
        result = validate_model(scalar_model())
        assert result.ok
        assert result.violations == ()

    def test_zero_R_not_positive_definite(self):
        result = validate_model(scalar_model(R=[[0.0]]))
        assert not result.ok
        assert any("R not positive definite" in v for v in result.violations)

    def test_nonsquare_A(self):
        bad = StateSpaceModel(
            A=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], b=[0.0, 0.0], G=np.eye(2),
            Q=np.eye(2), C=[[1.0, 0.0]], d=[0.0], R=[[1.0]],
            x0_mean=[0.0, 0.0], x0_cov=np.eye(2),
        )
        result = validate_model(bad)
        assert not result.ok
        assert any("A not square" in v for v in result.violations)

    def test_dimension_mismatch_reported(self):
        bad = scalar_model(C=[[1.0, 2.0]])
        result = validate_model(bad)
        assert not result.ok
        assert any("C has" in v for v in result.violations)

    def test_indefinite_Q_rejected(self):
        bad = StateSpaceModel(
            A=np.eye(2), b=np.zeros(2), G=np.eye(2),
            Q=[[1.0, 0.0], [0.0, -0.5]], C=[[1.0, 0.0]], d=[0.0], R=[[1.0]],
            x0_mean=np.zeros(2), x0_cov=np.eye(2),
        )
        result = validate_model(bad)
        assert any("Q not positive semi-definite" in v for v in result.violations)

    def test_gross_asymmetry_reported(self):
        bad = scalar_model()
        bad = StateSpaceModel(
            A=np.eye(2), b=np.zeros(2), G=np.eye(2),
            Q=[[1.0, 0.5], [0.0, 1.0]], C=[[1.0, 0.0]], d=[0.0], R=[[1.0]],
            x0_mean=np.zeros(2), x0_cov=np.eye(2),
        )
        result = validate_model(bad)
        assert any("Q not symmetric" in v for v in result.violations)

    def test_rounding_asymmetry_silently_symmetrized(self):
        eps = 1e-13
        model = StateSpaceModel(
            A=np.eye(2), b=np.zeros(2), G=np.eye(2),
            Q=[[1.0, 0.5 + eps], [0.5, 1.0]], C=[[1.0, 0.0]], d=[0.0], R=[[1.0]],
            x0_mean=np.zeros(2), x0_cov=np.eye(2),
        )
        assert np.array_equal(model.Q, model.Q.T)
        assert validate_model(model).ok

    def test_zero_x0_cov_is_psd(self):
        assert validate_model(scalar_model(x0_cov=[[0.0]])).ok

    def test_arrays_are_frozen(self):
        model = scalar_model()
        with pytest.raises(ValueError):
            model.A[0, 0] = 2.0


class TestSchedule:
    def test_requires_strictly_increasing(self):
        with pytest.raises(InvalidScheduleError):
            Schedule((3, 3), 10)
        with pytest.raises(InvalidScheduleError):
            Schedule((5, 2), 10)

    def test_requires_in_range(self):
        with pytest.raises(InvalidScheduleError):
            Schedule((0, 10), 10)
        with pytest.raises(InvalidScheduleError):
            Schedule((-1, 3), 10)

    def test_empty_schedule_allowed(self):
        s = Schedule((), 5)
        assert s.budget_N == 0
        assert not s.mask().any()

    def test_mask(self):
        s = Schedule((0, 3), 5)
        assert s.mask().tolist() == [True, False, False, True, False]


class TestRegularSchedule:
    def test_T10_N5(self):
        assert regular_schedule(10, 5).times == (0, 2, 4, 6, 8)

    def test_full_budget(self):
        assert regular_schedule(10, 10).times == tuple(range(10))

    def test_T7_N3(self):
        assert regular_schedule(7, 3).times == (0, 2, 4)

    @pytest.mark.parametrize("T,N", [(5, 6), (5, 0), (3, -1)])
    def test_invalid_budget(self, T, N):
        with pytest.raises(InvalidScheduleError):
            regular_schedule(T, N)

    @given(st.integers(min_value=1, max_value=500), st.data())
    @settings(max_examples=200, deadline=None)
    def test_always_valid(self, T, data):
        N = data.draw(st.integers(min_value=1, max_value=T))
        s = regular_schedule(T, N)
        assert len(s.times) == N
        assert all(t2 > t1 for t1, t2 in zip(s.times, s.times[1:]))
        assert 0 <= s.times[0] and s.times[-1] <= T - 1


class TestWarmup:
    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            WarmupConfig(-1)

    def test_zero_ok(self):
        assert WarmupConfig(0).t0 == 0


class TestSerialization:
    def test_model_round_trip(self, tmp_path):
        model = StateSpaceModel(
            A=[[0.9, 0.1], [0.0, 0.8]], b=[0.1, -0.2], G=np.eye(2),
            Q=[[0.3, 0.05], [0.05, 0.2]], C=[[1.0, 0.5]], d=[2.0], R=[[0.7]],
            x0_mean=[1.0, 0.0], x0_cov=np.eye(2),
        )
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        for key in ("A", "b", "G", "Q", "C", "d", "R", "x0_mean", "x0_cov"):
            np.testing.assert_array_equal(getattr(loaded, key), getattr(model, key))

    def test_model_document_keys(self):
        doc = model_to_dict(scalar_model())
        assert set(doc) == {"A", "b", "G", "Q", "C", "d", "R", "x0_mean", "x0_cov"}
        assert doc["A"] == [[1.0]]

    def test_model_missing_key(self):
        doc = model_to_dict(scalar_model())
        del doc["Q"]
        with pytest.raises(KeyError):
            model_from_dict(doc)

    def test_schedule_round_trip(self, tmp_path):
        s = Schedule((1, 4, 7), 9)
        path = tmp_path / "schedule.json"
        save_schedule(s, path)
        assert load_schedule(path) == s
        with open(path) as fh:
            doc = json.load(fh)
        assert doc == {"times": [1, 4, 7], "T": 9}
