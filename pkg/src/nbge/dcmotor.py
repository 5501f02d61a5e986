"""DC-motor recordings: square-wave excitation, fixed-step RK4 integration, windowed datasets and CSV I/O."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class MotorParams:
    R1: float = 5.0  # armature resistance, ohm
    L1: float = 0.1  # armature inductance, H
    Kphi: float = 0.1  # torque / back-emf constant, V.s/rad
    J1: float = 0.01  # shaft inertia, kg.m^2
    ff: float = 0.001  # fluid friction, N.m.s/rad

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"{k} must be positive, got {v}")

    def steady_state(self, u: float) -> tuple[float, float]:
        """Constant-voltage equilibrium ``(current, speed)``."""
        den = self.R1 * self.ff + self.Kphi ** 2
        return u * self.ff / den, self.Kphi * u / den

    def system(self) -> tuple[np.ndarray, np.ndarray]:
        """``(A, b)`` with ``d[i, omega]/dt = A @ [i, omega] + b * U``."""
        A = np.array([[-self.R1 / self.L1, -self.Kphi / self.L1],
                      [self.Kphi / self.J1, -self.ff / self.J1]])
        return A, np.array([1.0 / self.L1, 0.0])


@dataclass(frozen=True)
class ExcitationSpec:
    """Square voltage with a log frequency sweep, a duty-cycle sweep and a 10 s gain noise."""

    amplitude: float = 2.0
    f_lo: float = 0.05
    f_hi: float = 2.0
    sweep_period: float = 120.0
    duty_lo: float = 0.2
    duty_hi: float = 0.8
    duty_period: float = 40.0
    noise_period: float = 10.0
    noise_lo: float = 0.8
    noise_hi: float = 1.2


class SquareExcitation:
    def __init__(self, spec: ExcitationSpec, duration: float, seed=None):
        rng = np.random.default_rng(seed)
        self.spec = spec
        n_blocks = int(math.floor(duration / spec.noise_period)) + 2
        self.factors = rng.uniform(spec.noise_lo, spec.noise_hi, size=n_blocks)
        self.offset = rng.uniform(0.0, spec.sweep_period)
        self.duty_offset = rng.uniform(0.0, spec.duty_period)

    def phase(self, t: np.ndarray) -> np.ndarray:
        """Cycles elapsed since the start of the sweep (continuous across sweeps)."""
        s = self.spec
        T, r = s.sweep_period, s.f_hi / s.f_lo
        tau = np.asarray(t, dtype=float) + self.offset
        k, rem = np.divmod(tau, T)
        per_sweep = s.f_lo * T * (r - 1) / math.log(r)
        return k * per_sweep + s.f_lo * T * (r ** (rem / T) - 1) / math.log(r)

    def duty(self, t: np.ndarray) -> np.ndarray:
        s = self.spec
        frac = np.mod(np.asarray(t, dtype=float) + self.duty_offset, s.duty_period) / s.duty_period
        return s.duty_lo + (s.duty_hi - s.duty_lo) * frac

    def gain(self, t: np.ndarray) -> np.ndarray:
        block = np.floor(np.asarray(t, dtype=float) / self.spec.noise_period).astype(int)
        return self.factors[np.clip(block, 0, len(self.factors) - 1)]

    def __call__(self, t):
        on = np.mod(self.phase(t), 1.0) < self.duty(t)
        return self.spec.amplitude * on * self.gain(t)


@dataclass
class Recording:
    t: np.ndarray
    names: tuple[str, ...]
    values: np.ndarray  # channels x samples
    fs: float
    extras: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        if name in self.names:
            return self.values[self.names.index(name)]
        return self.extras[name]

    def __len__(self) -> int:
        return self.values.shape[1]


class SimulationError(RuntimeError):
    pass


def simulate(
    params: MotorParams | None = None,
    excitation: ExcitationSpec | Callable | float | None = None,
    fs: float = 100.0,
    duration: float = 600.0,
    seed=None,
) -> Recording:
    """Integrate the motor from rest with RK4 at step ``1/fs``.

    ``excitation`` is an :class:`ExcitationSpec` (seeded square wave), a
    callable ``U(t)`` or a constant voltage.
    """
    if not (fs > 0 and duration > 0):
        raise ValueError("fs and duration must be positive")
    params = params or MotorParams()
    if excitation is None:
        excitation = ExcitationSpec()
    if isinstance(excitation, ExcitationSpec):
        u_fn = SquareExcitation(excitation, duration, seed)
    elif callable(excitation):
        u_fn = excitation
    else:
        level = float(excitation)
        u_fn = lambda t: np.full(np.shape(t), level)  # noqa: E731

    h = 1.0 / fs
    n = int(round(duration * fs)) + 1
    t = np.arange(n) * h
    u_half = np.asarray(u_fn(np.arange(2 * n - 1) * (h / 2)), dtype=float)
    a = -params.R1 / params.L1
    b = -params.Kphi / params.L1
    c = params.Kphi / params.J1
    d = -params.ff / params.J1
    gin = 1.0 / params.L1

    cur = np.empty(n)
    om = np.empty(n)
    i, w = 0.0, 0.0
    cur[0], om[0] = i, w
    h2, h6 = h / 2, h / 6
    for k in range(n - 1):
        u0, um, u1 = u_half[2 * k], u_half[2 * k + 1], u_half[2 * k + 2]
        k1i = a * i + b * w + gin * u0
        k1w = c * i + d * w
        i2, w2 = i + h2 * k1i, w + h2 * k1w
        k2i = a * i2 + b * w2 + gin * um
        k2w = c * i2 + d * w2
        i3, w3 = i + h2 * k2i, w + h2 * k2w
        k3i = a * i3 + b * w3 + gin * um
        k3w = c * i3 + d * w3
        i4, w4 = i + h * k3i, w + h * k3w
        k4i = a * i4 + b * w4 + gin * u1
        k4w = c * i4 + d * w4
        i += h6 * (k1i + 2 * k2i + 2 * k3i + k4i)
        w += h6 * (k1w + 2 * k2w + 2 * k3w + k4w)
        cur[k + 1], om[k + 1] = i, w
        if not (math.isfinite(i) and math.isfinite(w)) or abs(i) > 1e150 or abs(w) > 1e150:
            raise SimulationError(
                f"state diverged at t={t[k + 1]:.4g}s with step {h:.3g}s; use a higher fs (smaller step)")
    u = u_half[::2]
    return Recording(t, ("U", "omega"), np.vstack([u, om]), fs, {"current": cur})


def energy_audit(rec: Recording, params: MotorParams | None = None, start: int = 0, stop: int | None = None) -> dict:
    """Trapezoidal energy budget between two sample indices."""
    params = params or MotorParams()
    sl = slice(start, stop)
    t = rec.t[sl]
    u, i, w = rec["U"][sl], rec["current"][sl], rec["omega"][sl]
    source = np.trapezoid(u * i, t)
    dissipated = np.trapezoid(params.R1 * i ** 2 + params.ff * w ** 2, t)
    stored = 0.5 * params.L1 * (i[-1] ** 2 - i[0] ** 2) + 0.5 * params.J1 * (w[-1] ** 2 - w[0] ** 2)
    return {"source": source, "dissipated": dissipated, "stored": stored,
            "residual": source - dissipated - stored}


# ------------------------------------------------------------------- datasets

@dataclass
class ForecastDataset:
    """Fixed-length windows ``n x C x window`` with a train/val/test split."""

    windows: np.ndarray
    names: tuple[str, ...]
    fs: float
    origins: list[tuple[int, int]]  # (recording index, start sample)
    split: dict[str, np.ndarray]

    def part(self, name: str) -> np.ndarray:
        return self.windows[self.split[name]]

    def __len__(self) -> int:
        return len(self.windows)

    def manifest(self) -> dict:
        assign = {}
        for name, idx in self.split.items():
            for k in idx:
                assign[int(k)] = name
        return {
            "window": int(self.windows.shape[-1]),
            "channels": list(self.names),
            "fs": self.fs,
            "windows": [
                {"index": k, "recording": r, "start": s, "split": assign.get(k)}
                for k, (r, s) in enumerate(self.origins)
            ],
        }


class DatasetError(ValueError):
    pass


def build_dataset(
    recordings: Recording | Sequence[Recording],
    window: int = 600,
    n_samples: int = 500,
    seed=None,
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
) -> ForecastDataset:
    """Cut non-overlapping windows from randomly chosen recordings and split them."""
    if isinstance(recordings, Recording):
        recordings = [recordings]
    names = recordings[0].names
    if any(r.names != names for r in recordings):
        raise DatasetError("recordings have different channels")
    slots = [(ri, k * window) for ri, r in enumerate(recordings) for k in range(len(r) // window)]
    if len(slots) < n_samples:
        raise DatasetError(f"only {len(slots)} non-overlapping windows of {window} available, {n_samples} requested")
    rng = np.random.default_rng(seed)
    chosen = [slots[k] for k in sorted(rng.choice(len(slots), size=n_samples, replace=False))]
    data = np.stack([recordings[ri].values[:, s:s + window] for ri, s in chosen])
    order = rng.permutation(n_samples)
    n_train = int(round(fractions[0] * n_samples))
    n_val = int(round(fractions[1] * n_samples))
    split = {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train:n_train + n_val]),
        "test": np.sort(order[n_train + n_val:]),
    }
    return ForecastDataset(data, names, recordings[0].fs, chosen, split)


def dataset_from_manifest(manifest: dict, recordings: Sequence[Recording]) -> ForecastDataset:
    w = manifest["window"]
    origins = [(int(e["recording"]), int(e["start"])) for e in manifest["windows"]]
    data = np.stack([recordings[r].values[:, s:s + w] for r, s in origins])
    split = {name: np.array([e["index"] for e in manifest["windows"] if e["split"] == name], dtype=int)
             for name in ("train", "val", "test")}
    return ForecastDataset(data, tuple(manifest["channels"]), float(manifest["fs"]), origins, split)


def simulate_recordings(n_recordings: int = 5, duration: float = 660.0, fs: float = 100.0, seed: int = 0,
                        params: MotorParams | None = None, excitation: ExcitationSpec | None = None) -> list[Recording]:
    """Independent recordings, each with its own random stream."""
    seeds = np.random.SeedSequence(seed).spawn(n_recordings)
    return [simulate(params, excitation or ExcitationSpec(), fs, duration, np.random.default_rng(s))
            for s in seeds]


# ------------------------------------------------------------------------ CSV

def write_csv(rec: Recording, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t",) + rec.names)
        for row in zip(rec.t, *rec.values):
            w.writerow([repr(float(v)) for v in row])


def read_csv(path, fs: float | None = None) -> Recording:
    """Read a ``t,<channel>,...`` CSV into a recording."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in r] for r in reader if r])
    if not header or header[0] != "t":
        raise DatasetError(f"{path}: first column must be 't'")
    t = rows[:, 0]
    if fs is None:
        fs = 1.0 / float(np.median(np.diff(t))) if len(t) > 1 else 1.0
    return Recording(t, tuple(header[1:]), rows[:, 1:].T.copy(), fs)


def write_manifest(ds: ForecastDataset, path, recordings: Sequence[str] = ()) -> None:
    m = ds.manifest()
    m["recordings"] = list(recordings)
    with open(path, "w") as fh:
        json.dump(m, fh, indent=1)
