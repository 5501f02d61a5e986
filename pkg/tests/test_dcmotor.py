import json

import numpy as np
import pytest

from nbge.dcmotor import (DatasetError, ExcitationSpec, MotorParams, SimulationError, SquareExcitation,
                          build_dataset, dataset_from_manifest, energy_audit, read_csv, simulate,
                          simulate_recordings, write_csv, write_manifest)
from oracles import rk4_reference


def analytic_step(params, u, t):
    """Exact state at time t under constant voltage from rest, via eigendecomposition."""
    A, b = params.system()
    w, V = np.linalg.eig(A)
    expAt = (V @ np.diag(np.exp(w * t)) @ np.linalg.inv(V)).real
    return np.linalg.solve(A, (expAt - np.eye(2)) @ (b * u))


def test_steady_state_closed_form():
    i, w = MotorParams().steady_state(2.0)
    assert w == pytest.approx(2 * 0.1 / (5 * 0.001 + 0.01))
    assert w == pytest.approx(13.3333, rel=1e-4)
    assert i == pytest.approx(2 * 0.001 / 0.015)


def test_simulated_steady_state():
    rec = simulate(excitation=2.0, fs=100, duration=60)
    assert rec["omega"][-1] == pytest.approx(40 / 3, rel=0.01)
    assert rec["current"][-1] == pytest.approx(MotorParams().steady_state(2.0)[0], rel=0.01)


def test_matches_independent_rk4():
    rec = simulate(excitation=1.5, fs=50, duration=2)
    x = rk4_reference(MotorParams(), 1.5, 2.0, 1 / 50)
    assert rec["current"][-1] == pytest.approx(x[0], rel=1e-12)
    assert rec["omega"][-1] == pytest.approx(x[1], rel=1e-12)


def test_rk4_order():
    p = MotorParams()
    exact = analytic_step(p, 2.0, 1.0)
    errs = []
    for fs in (20, 40, 80, 160):
        rec = simulate(p, 2.0, fs=fs, duration=1.0)
        errs.append(np.hypot(rec["current"][-1] - exact[0], rec["omega"][-1] - exact[1]))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3.5), orders


def test_energy_balance_smooth_input():
    rec = simulate(excitation=lambda t: 1 + np.sin(2 * np.pi * 0.3 * t), fs=100, duration=30)
    a = energy_audit(rec)
    assert abs(a["residual"]) <= 1e-3 * a["source"]


def test_energy_balance_square_wave():
    rec = simulate(fs=1000, duration=60, seed=3)
    for start, stop in ((0, 20000), (20000, 60001), (0, None)):
        a = energy_audit(rec, start=start, stop=stop)
        assert abs(a["residual"]) <= 1e-3 * a["source"]


def test_excitation_levels():
    spec = ExcitationSpec()
    ex = SquareExcitation(spec, 100.0, seed=0)
    t = np.arange(0, 100, 0.01)
    u = ex(t)
    on = u[u > 0]
    assert np.all((on >= 2 * 0.8 - 1e-12) & (on <= 2 * 1.2 + 1e-12))
    assert 0.05 < np.mean(u > 0) < 0.95
    # gain is constant inside each 10 s block
    for k in range(10):
        block = on[(t[u > 0] >= 10 * k) & (t[u > 0] < 10 * k + 10)]
        if len(block):
            assert np.ptp(block) < 1e-12


def test_excitation_sweeps():
    ex = SquareExcitation(ExcitationSpec(), 300.0, seed=1)
    t = np.linspace(0, 300, 30001)
    d = ex.duty(t)
    assert d.min() >= 0.2 and d.max() <= 0.8
    inst = np.gradient(ex.phase(t), t)
    assert inst.min() >= 0.05 * 0.99 and inst.max() <= 2.0 * 1.01


def test_seeded_determinism():
    a = simulate(duration=20, seed=5)
    b = simulate(duration=20, seed=5)
    c = simulate(duration=20, seed=6)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_recording_layout():
    rec = simulate(duration=10, fs=100, seed=0)
    assert rec.names == ("U", "omega")
    assert rec.values.shape == (2, 1001)
    assert len(rec) == 1001
    assert np.allclose(np.diff(rec.t), 0.01)


def test_divergence_is_reported():
    with pytest.raises(SimulationError, match="fs"):
        simulate(excitation=2.0, fs=0.5, duration=2000)


def test_invalid_params():
    with pytest.raises(ValueError):
        MotorParams(R1=0.0)
    with pytest.raises(ValueError):
        simulate(fs=-1)


@pytest.fixture(scope="module")
def recordings():
    return simulate_recordings(5, 660.0, 100.0, seed=0)


def test_dataset_windows(recordings):
    ds = build_dataset(recordings, 600, 500, seed=0)
    assert ds.windows.shape == (500, 2, 600)
    spans = {}
    for r, s in ds.origins:
        spans.setdefault(r, []).append(s)
    for starts in spans.values():
        starts = sorted(starts)
        assert all(b - a >= 600 for a, b in zip(starts, starts[1:]))
    sizes = {k: len(v) for k, v in ds.split.items()}
    assert sizes == {"train": 350, "val": 50, "test": 100}
    allidx = np.concatenate(list(ds.split.values()))
    assert sorted(allidx) == list(range(500))
    k = 17
    r, s = ds.origins[k]
    assert np.array_equal(ds.windows[k], recordings[r].values[:, s:s + 600])


def test_dataset_too_short(recordings):
    with pytest.raises(DatasetError):
        build_dataset(recordings[:1], 600, 200)


def test_csv_round_trip(tmp_path):
    rec = simulate(duration=5, seed=2)
    write_csv(rec, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "t,U,omega"
    again = read_csv(tmp_path / "r.csv")
    assert again.names == rec.names
    assert np.array_equal(again.values, rec.values)
    assert again.fs == pytest.approx(100.0)


def test_csv_requires_time_column(tmp_path):
    (tmp_path / "bad.csv").write_text("x,U\n0,1\n")
    with pytest.raises(DatasetError):
        read_csv(tmp_path / "bad.csv")


def test_manifest_round_trip(tmp_path, recordings):
    ds = build_dataset(recordings, 600, 100, seed=3)
    write_manifest(ds, tmp_path / "m.json", ["a.csv"])
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["recordings"] == ["a.csv"] and len(m["windows"]) == 100
    again = dataset_from_manifest(m, recordings)
    assert np.array_equal(again.windows, ds.windows)
    assert all(np.array_equal(again.split[k], ds.split[k]) for k in ds.split)
