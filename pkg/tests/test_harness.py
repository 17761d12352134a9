import numpy as np
import pytest

from koopman_auv.edmd import LiftedModel
from koopman_auv.lifting import make_dictionary
from koopman_auv.mpc import KoopmanMPC, MpcConfig
from koopman_auv.plant import simulate
from koopman_auv.harness import (ClosedLoopTrace, ReferenceSignal, read_trace_csv,
                                 run_prediction_experiment, run_tracking_experiment, square_wave,
                                 trace_metrics, write_trace_csv)


def make_trace(u, v=None, y=None, dt=0.1, **bounds):
    u = np.asarray(u, dtype=float)
    v = np.zeros_like(u) if v is None else v
    y = np.zeros_like(u) if y is None else y
    du = np.diff(u, prepend=0.0)
    tr = ClosedLoopTrace(dt=dt, **bounds)
    for k in range(len(u)):
        tr.append(k * dt, v[k], u[k], du[k], y[k], 0.0)
    return tr


class TestReference:
    def test_piecewise_left_closed(self):
        r = ReferenceSignal(((0, 1.0), (2, 3.0)))
        assert r(0.0) == 1.0 and r(1.999) == 1.0 and r(2.0) == 3.0 and r(50) == 3.0
        assert r(np.array([0.5, 2.5])).tolist() == [1.0, 3.0]

    def test_breakpoints_on_sample_grid(self):
        r = ReferenceSignal()
        t = np.arange(1200) * 0.01
        assert np.sum(r(t) == 0.5) == 300

    @pytest.mark.parametrize("bp", [((1.0, 0.0),), ((0, 1), (0, 2)), ()])
    def test_invalid(self, bp):
        with pytest.raises(ValueError):
            ReferenceSignal(bp)


def test_square_wave_phase():
    w = square_wave(40, 0.1, 1.0, 0.01)
    assert w.shape == (100,)
    assert w[:5].tolist() == [40] * 5 and w[5:10].tolist() == [-40] * 5 and w[10] == 40


class TestPrediction:
    def test_default_scenarios(self, plant, default_model):
        w = square_wave(40, 0.1, 1.0, 0.01)
        for v0 in (0.0, -0.1):
            res = run_prediction_experiment(plant, default_model, v0, w, 1.0, 0.01)
            assert res.truth.shape == res.prediction.shape == (101,)
            assert np.array_equal(res.truth, simulate(v0, w, 0.01, plant))
            assert res.prediction[0] == v0
            assert res.rmse == pytest.approx(np.sqrt(np.mean((res.truth - res.prediction) ** 2)))

    def test_zero_input_exact_model(self, plant):
        m = LiftedModel(dictionary=make_dictionary(), a=np.eye(5), b=np.zeros(5))
        res = run_prediction_experiment(plant, m, 0.0, np.zeros(100), 1.0, 0.01)
        assert res.rmse == 0.0

    def test_duration_not_multiple(self, plant, default_model):
        with pytest.raises(ValueError):
            run_prediction_experiment(plant, default_model, 0.0, np.zeros(10), 0.055, 0.01)


class TestTracking:
    def test_zero_reference_stays_at_rest(self, plant):
        m = LiftedModel(dictionary=make_dictionary(n_rbf=0), a=[[0.99]], b=[[0.001]])
        ctrl = KoopmanMPC(m, MpcConfig.preset("matlab"))
        tr = run_tracking_experiment(plant, ctrl, ReferenceSignal(((0.0, 0.0),)), 1.0, 0.01)
        assert len(tr) == 100
        assert not np.any(tr.u) and not np.any(tr.v)

    def test_default_preset_respects_boxes(self, plant, default_model):
        ctrl = KoopmanMPC(default_model, MpcConfig.preset("matlab"))
        tr = run_tracking_experiment(plant, ctrl, ReferenceSignal(), 6.0, 0.01)
        a = tr.as_arrays()
        assert np.abs(a["u"]).max() <= 50 + 1e-6
        assert np.abs(a["du"]).max() <= 20 + 1e-6
        assert np.array_equal(np.diff(a["t"]).round(12), np.full(599, 0.01))
        assert trace_metrics(tr)["violations"] == 0

    def test_reproducible(self, plant, default_model, tmp_path):
        paths = []
        for i in range(2):
            ctrl = KoopmanMPC(default_model, MpcConfig.preset("matlab"))
            tr = run_tracking_experiment(plant, ctrl, ReferenceSignal(), 2.0, 0.01)
            paths.append(tmp_path / f"t{i}.csv")
            write_trace_csv(tr, paths[-1])
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_rejects_divergence(self, plant):
        m = LiftedModel(dictionary=make_dictionary(n_rbf=0), a=[[1.0]], b=[[1e-9]])
        cfg = MpcConfig(u_min=-1e200, u_max=1e200, du_min=-1e200, du_max=1e200, horizon=2, r=1e-30)
        ctrl = KoopmanMPC(m, cfg)
        with pytest.raises(RuntimeError, match="non-finite"), np.errstate(all="ignore"):
            run_tracking_experiment(plant, ctrl, ReferenceSignal(((0.0, 1e6),)), 0.5, 0.01)


class TestMetrics:
    def test_all_zero_trace(self):
        m = trace_metrics(make_trace(np.zeros(5), u_bounds=(-1, 1), du_bounds=(-1, 1)))
        assert m["max_abs_u"] == 0 and m["max_abs_du"] == 0 and m["violations"] == 0
        assert m["total_cost"] == 0
        assert m["segments"][0]["settling_time"] == 0 and m["segments"][0]["steady_state_error"] == 0

    def test_compliant_trace_has_no_violations(self):
        assert trace_metrics(make_trace([0, 10, 20, 25], u_bounds=(-50, 50), du_bounds=(-20, 20)))["violations"] == 0

    def test_increment_violation(self):
        m = trace_metrics(make_trace([0, 15, 40], u_bounds=(-50, 50), du_bounds=(-20, 20)))
        assert m["max_abs_du"] == 25.0
        assert m["violations"] == 1

    def test_segments_and_settling(self):
        y = np.r_[np.full(10, 1.0), np.full(10, 2.0)]
        v = np.r_[0.0, 0.5, 0.9, 0.99, np.ones(6), 1.5, 1.9, 2.1, np.full(7, 2.001)]
        m = trace_metrics(make_trace(np.zeros(20), v=v, y=y))
        s1, s2 = m["segments"]
        assert s1["step"] == 1.0 and s2["step"] == 1.0
        assert s1["settling_time"] == pytest.approx(0.3)
        assert s2["settling_time"] == pytest.approx(0.3)
        assert s2["steady_state_error"] == pytest.approx(0.001)

    def test_preview_excludes_anticipation(self):
        y = np.r_[np.full(10, 1.0), np.full(10, 0.0)]
        v = np.r_[np.ones(8), 0.7, 0.4, np.zeros(10)]
        m0 = trace_metrics(make_trace(np.zeros(20), v=v, y=y))
        m1 = trace_metrics(make_trace(np.zeros(20), v=v, y=y), preview=0.2)
        assert m0["segments"][0]["steady_state_error"] == pytest.approx(0.6)
        assert m1["segments"][0]["steady_state_error"] == 0.0

    def test_never_settles(self):
        m = trace_metrics(make_trace(np.zeros(4), v=np.zeros(4), y=np.ones(4)))
        assert m["segments"][0]["settling_time"] is None

    def test_empty(self):
        with pytest.raises(ValueError):
            trace_metrics(ClosedLoopTrace(dt=0.1))


def test_trace_csv_roundtrip(tmp_path):
    tr = make_trace([0.0, 1.5, -2.25], v=np.array([0.1, 0.2, 0.3]), y=np.ones(3))
    tr.flags[1] = "clamped"
    path = tmp_path / "trace.csv"
    write_trace_csv(tr, path)
    assert path.read_text().splitlines()[0] == "t,v,u,du,y_r,cost,flags"
    back = read_trace_csv(path)
    assert back.u == tr.u and back.v == tr.v and back.flags == tr.flags
