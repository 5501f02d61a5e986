import numpy as np
import pytest

from nbge.bondgraph import dc_motor
from nbge.bondmatrix import build_bond_matrix
from nbge.dcmotor import ForecastDataset
from nbge.dualgraph import compile_dual_graph
from nbge.metrics import huber_grad, huber_loss
from nbge.training import (SCENARIOS, Adam, Forecaster, LinearHead, MLPHead, Scenario, Standardizer, TrainConfig,
                           TrainingError, build_forecaster, evaluate, run_protocol, train)
from oracles import central_difference


def ar_dataset(n=120, length=30, seed=0, channels=1):
    """Noiseless damped AR(2) windows: the future is a linear function of the past."""
    rng = np.random.default_rng(seed)
    w = np.empty((n, channels, length))
    for k in range(n):
        for c in range(channels):
            x = list(rng.normal(size=2))
            for _ in range(length - 2):
                x.append(1.6 * x[-1] - 0.8 * x[-2])
            w[k, c] = x
    idx = np.arange(n)
    split = {"train": idx[:80], "val": idx[80:100], "test": idx[100:]}
    return ForecastDataset(w, tuple(f"x{c}" for c in range(channels)), 1.0, [(0, 0)] * n, split)


def motor_graph():
    return compile_dual_graph(build_bond_matrix(dc_motor()), {0: (1, "e"), 1: (6, "f")})


def test_scenarios():
    assert [(s.n_in, s.k_out) for s in SCENARIOS] == [(100, 500), (300, 300), (500, 100)]
    assert all(s.n_in + s.k_out == 600 for s in SCENARIOS)
    assert Scenario.parse("100-500") == Scenario(100, 500)
    assert Scenario.parse("300") == Scenario(300, 300)
    assert Scenario.parse("100;500").name == "100-500"
    with pytest.raises(ValueError):
        Scenario(0, 10)
    with pytest.raises(ValueError):
        Scenario(500, 200).split(np.zeros((1, 1, 600)))


def test_standardizer():
    w = np.random.default_rng(0).normal(loc=[[3.0], [-1.0]], scale=[[2.0], [0.5]], size=(50, 2, 40))
    s = Standardizer.fit(w)
    z = s(w)
    assert np.allclose(z.mean(axis=(0, 2)), 0, atol=1e-12)
    assert np.allclose(z.std(axis=(0, 2)), 1)
    assert np.allclose(s.inverse(z), w)
    assert np.all(Standardizer.fit(np.ones((3, 1, 4))).std == 1.0)


def test_linear_head_fits_linear_ar():
    ds = ar_dataset()
    sc = Scenario(10, 20)
    m, hist = train(build_forecaster("linear", sc, 1, seed=0), ds, sc,
                    TrainConfig(epochs=400, batch_size=16, lr=3e-3), seed=0)
    x, y = sc.split(ds.part("train"))
    assert np.mean((m.predict(x) - y) ** 2) < 1e-6
    assert hist.best_epoch >= 0 and len(hist.val_loss) == 400


def test_training_is_deterministic():
    ds = ar_dataset(channels=2)
    sc = Scenario(12, 6)
    g = motor_graph()

    def run():
        m = build_forecaster("linear", sc, 2, g, {"n_layers": 2, "modes": (4, 5)}, seed=3)
        return train(m, ds, sc, TrainConfig(epochs=3), seed=3)[0].params

    a, b = run(), run()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_training_reduces_loss():
    ds = ar_dataset(channels=2)
    sc = Scenario(12, 6)
    m = build_forecaster("mlp", sc, 2, motor_graph(), {"n_layers": 2}, hidden=16, seed=0)
    _, hist = train(m, ds, sc, TrainConfig(epochs=15, lr=3e-3), seed=0)
    assert hist.best_val < hist.val_loss[0]


def test_best_validation_parameters_are_kept():
    ds = ar_dataset()
    sc = Scenario(10, 20)
    m, hist = train(build_forecaster("linear", sc, 1, seed=1), ds, sc, TrainConfig(epochs=20, lr=0.05), seed=1)
    xv, yv = sc.split(m.scaler(ds.part("val")))
    assert huber_loss(m.forward(xv), yv, 0.1) == pytest.approx(hist.best_val)


def test_divergence_aborts():
    ds = ar_dataset()
    ds.windows[3, 0, 5] = np.inf
    sc = Scenario(10, 20)
    with pytest.raises(TrainingError, match="non-finite training loss at epoch 0"), np.errstate(all="ignore"):
        train(build_forecaster("linear", sc, 1, seed=0), ds, sc, TrainConfig(epochs=5), seed=0)


def test_missing_split():
    ds = ar_dataset()
    ds.split["val"] = np.array([], dtype=int)
    with pytest.raises(ValueError):
        train(build_forecaster("linear", Scenario(10, 20), 1, seed=0), ds, Scenario(10, 20))
    del ds.split["test"]
    with pytest.raises(ValueError):
        evaluate(None, ds, Scenario(10, 20))


class _Oracle:
    """Predicts the stored targets exactly, or zeros."""

    n_params = 0

    def __init__(self, ds, sc, zero=False):
        self.lookup = {x.tobytes(): y for x, y in zip(*sc.split(ds.windows))}
        self.zero = zero

    def predict(self, x):
        y = np.stack([self.lookup[w.tobytes()] for w in x])
        return np.zeros_like(y) if self.zero else y


def test_evaluate_perfect_and_zero_predictors():
    ds = ar_dataset()
    sc = Scenario(10, 20)
    rep = evaluate(_Oracle(ds, sc), ds, sc)
    assert rep.mae == 0 and rep.mse == 0 and abs(rep.sdtw) < 1e-9
    rep = evaluate(_Oracle(ds, sc, zero=True), ds, sc, with_sdtw=False)
    _, y = sc.split(ds.part("test"))
    assert rep.mse == pytest.approx(np.mean(y ** 2))
    assert rep.mae <= np.sqrt(rep.mse)
    assert rep.sdtw is None


def test_parameter_counts():
    sc = Scenario(100, 500)
    raw = build_forecaster("linear", sc, 2, seed=0)
    assert raw.n_params == 100 * 500 + 500
    mlp = build_forecaster("mlp", sc, 2, hidden=8, seed=0)
    assert mlp.n_params == 100 * 8 + 8 + 8 * 500 + 500
    informed = build_forecaster("linear", sc, 2, motor_graph(), {"d0": 32, "n_layers": 1, "modes": (4,)}, seed=0)
    assert informed.n_params == informed.head.params["W"].size + 500 + informed.encoder.n_params


def test_channel_count_must_match_graph():
    with pytest.raises(ValueError):
        build_forecaster("linear", Scenario(10, 5), 3, motor_graph())


@pytest.mark.parametrize("head", [LinearHead, MLPHead])
def test_head_gradients(head):
    rng = np.random.default_rng(0)
    h = head.init(6, 4, rng, hidden=5)
    x = rng.normal(size=(3, 2, 6))
    y = rng.normal(size=(3, 2, 4))
    pred = h.forward(x, record=True)
    g, gx = h.backward(huber_grad(pred, y, 0.5))
    for k, p in h.params.items():
        assert np.allclose(g[k], central_difference(lambda: huber_loss(h.forward(x), y, 0.5), p), atol=1e-8)
    assert np.allclose(gx, central_difference(lambda: huber_loss(h.forward(x), y, 0.5), x), atol=1e-8)


def test_adam_minimizes_quadratic():
    p = {"x": np.array([3.0, -2.0])}
    opt = Adam(p, lr=0.1)
    for _ in range(500):
        opt.step(p, {"x": 2 * p["x"]})
    assert np.allclose(p["x"], 0, atol=1e-3)


def test_forecaster_checkpoint(tmp_path):
    ds = ar_dataset(channels=2)
    sc = Scenario(12, 6)
    for graph in (None, motor_graph()):
        m = build_forecaster("mlp", sc, 2, graph, {"n_layers": 2}, hidden=8, seed=0)
        m, _ = train(m, ds, sc, TrainConfig(epochs=2), seed=0)
        m.save(tmp_path / "m.npz", extra={"tag": 1})
        again, extra = Forecaster.load(tmp_path / "m.npz")
        x, _ = sc.split(ds.part("test"))
        assert extra == {"tag": 1}
        assert np.array_equal(again.predict(x), m.predict(x))


def test_run_protocol_keeps_best_by_validation():
    ds = ar_dataset()
    sc = Scenario(10, 20)
    res = run_protocol("Linear", lambda s: build_forecaster("linear", sc, 1, seed=s), ds, sc,
                       TrainConfig(epochs=3, lr=1e-2), runs=5, keep=2, base_seed=10)
    assert len(res.runs) == 5 and len(res.kept) == 2
    vals = [r.val_loss for r in res.runs]
    assert vals == sorted(vals)
    assert [r.seed for r in res.kept] == [r.seed for r in res.runs[:2]]
    s = res.summary()
    assert s["kept"] == 2 and s["n_params"] == 220
    assert s["mse"] == pytest.approx(np.mean([r.test.mse for r in res.kept]))
    assert s["sdtw"] is not None
    x, _ = sc.split(ds.part("test"))
    assert res.best is not None and res.best.predict(x).shape == (20, 1, 20)
