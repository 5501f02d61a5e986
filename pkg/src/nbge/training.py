"""Forecasting heads, informed/raw forecasters, Adam training and the multi-run protocol."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dcmotor import ForecastDataset
from .encoder import NBgE, EncoderConfig
from .dualgraph import DualGraph
from .metrics import forecast_metrics, huber_grad, huber_loss

log = logging.getLogger(__name__)

WINDOW = 600


@dataclass(frozen=True)
class Scenario:
    n_in: int
    k_out: int

    def __post_init__(self):
        if self.n_in <= 0 or self.k_out <= 0:
            raise ValueError("scenario lengths must be positive")

    @classmethod
    def parse(cls, text: str, window: int = WINDOW) -> "Scenario":
        """``"100-500"`` or ``"100"`` (the rest of the window is forecast)."""
        parts = text.replace(";", "-").split("-")
        n = int(parts[0])
        k = int(parts[1]) if len(parts) > 1 else window - n
        return cls(n, k)

    @property
    def name(self) -> str:
        return f"{self.n_in}-{self.k_out}"

    def split(self, windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if windows.shape[-1] < self.n_in + self.k_out:
            raise ValueError(f"windows of {windows.shape[-1]} are too short for {self.name}")
        return windows[..., :self.n_in], windows[..., self.n_in:self.n_in + self.k_out]


SCENARIOS = tuple(Scenario(n, WINDOW - n) for n in (100, 300, 500))


# ----------------------------------------------------------------------- heads

def _uniform(rng, shape, fan_in):
    a = fan_in ** -0.5
    return rng.uniform(-a, a, size=shape)


class LinearHead:
    kind = "linear"

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params

    @classmethod
    def init(cls, d_in: int, d_out: int, rng=None, **_) -> "LinearHead":
        rng = np.random.default_rng(rng)
        return cls({"W": _uniform(rng, (d_in, d_out), d_in), "b": _uniform(rng, (d_out,), d_in)})

    def forward(self, x, record: bool = False):
        if record:
            self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, g):
        x = self._x
        d_in = x.shape[-1]
        grads = {"W": x.reshape(-1, d_in).T @ g.reshape(-1, g.shape[-1]), "b": g.reshape(-1, g.shape[-1]).sum(0)}
        return grads, g @ self.params["W"].T


class MLPHead:
    kind = "mlp"

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params

    @classmethod
    def init(cls, d_in: int, d_out: int, rng=None, hidden: int = 256, **_) -> "MLPHead":
        rng = np.random.default_rng(rng)
        return cls({
            "W1": _uniform(rng, (d_in, hidden), d_in), "b1": _uniform(rng, (hidden,), d_in),
            "W2": _uniform(rng, (hidden, d_out), hidden), "b2": _uniform(rng, (d_out,), hidden),
        })

    def forward(self, x, record: bool = False):
        p = self.params
        z = x @ p["W1"] + p["b1"]
        h = np.maximum(z, 0.0)
        if record:
            self._x, self._z, self._h = x, z, h
        return h @ p["W2"] + p["b2"]

    def backward(self, g):
        p = self.params
        x, z, h = self._x, self._z, self._h
        g2 = g.reshape(-1, g.shape[-1])
        grads = {"W2": h.reshape(-1, h.shape[-1]).T @ g2, "b2": g2.sum(0)}
        gz = (g @ p["W2"].T) * (z > 0)
        gz2 = gz.reshape(-1, gz.shape[-1])
        grads["W1"] = x.reshape(-1, x.shape[-1]).T @ gz2
        grads["b1"] = gz2.sum(0)
        return grads, gz @ p["W1"].T


HEADS = {"linear": LinearHead, "mlp": MLPHead}


# ------------------------------------------------------------------ forecaster

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, windows: np.ndarray) -> "Standardizer":
        mean = windows.mean(axis=(0, 2))
        std = windows.std(axis=(0, 2))
        return cls(mean, np.where(std > 0, std, 1.0))

    def __call__(self, x):
        return (x - self.mean[:, None]) / self.std[:, None]

    def inverse(self, z):
        return z * self.std[:, None] + self.mean[:, None]


class Forecaster:
    """Channel-wise head on raw windows, or on the encoder's observed-node rows when informed."""

    def __init__(self, head, encoder: NBgE | None = None, scaler: Standardizer | None = None):
        self.head = head
        self.encoder = encoder
        self.scaler = scaler

    @property
    def informed(self) -> bool:
        return self.encoder is not None

    @property
    def params(self) -> dict[str, np.ndarray]:
        out = {f"head.{k}": v for k, v in self.head.params.items()}
        if self.encoder is not None:
            out.update({f"enc.{k}": v for k, v in self.encoder.params.items()})
        return out

    def set_params(self, flat: dict[str, np.ndarray]) -> None:
        for k, v in flat.items():
            group, name = k.split(".", 1)
            target = self.head.params if group == "head" else self.encoder.params
            target[name] = v

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def forward(self, x, record: bool = False) -> np.ndarray:
        """Forecast in standardized units from standardized inputs ``B x C x n_in``."""
        if self.encoder is None:
            return self.head.forward(x, record)
        h = self.encoder.forward(x, record)
        return self.head.forward(self.encoder.observed_rows(h), record)

    def backward(self, g) -> dict[str, np.ndarray]:
        hg, gx = self.head.backward(g)
        grads = {f"head.{k}": v for k, v in hg.items()}
        if self.encoder is not None:
            g_out = np.zeros((gx.shape[0], self.encoder.graph.n_nodes, gx.shape[-1]))
            g_out[:, self.encoder.channel_nodes] = gx
            grads.update({f"enc.{k}": v for k, v in self.encoder.backward(g_out).items()})
        return grads

    def predict(self, x_raw: np.ndarray) -> np.ndarray:
        """Forecast in original units from raw input windows."""
        z = self.forward(self.scaler(x_raw))
        return self.scaler.inverse(z)

    # ------------------------------------------------------------ checkpoint
    def save(self, path, extra: dict | None = None) -> None:
        meta = {
            "version": 1,
            "head": self.head.kind,
            "scaler": {"mean": self.scaler.mean.tolist(), "std": self.scaler.std.tolist()},
            "encoder": self.encoder.state_dict() if self.encoder is not None else None,
            "extra": extra or {},
        }
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays["meta"] = np.array(json.dumps(meta))
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> tuple["Forecaster", dict]:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            flat = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        head = HEADS[meta["head"]]({k[5:]: v for k, v in flat.items() if k.startswith("head.")})
        enc = None
        if meta["encoder"] is not None:
            enc = NBgE.from_arrays(meta["encoder"], {k[4:]: v for k, v in flat.items() if k.startswith("enc.")})
        sc = Standardizer(np.array(meta["scaler"]["mean"]), np.array(meta["scaler"]["std"]))
        return cls(head, enc, sc), meta["extra"]


def build_forecaster(
    head: str,
    scenario: Scenario,
    n_channels: int,
    graph: DualGraph | None = None,
    encoder_config: dict | None = None,
    fs: float = 1.0,
    hidden: int = 256,
    seed=None,
) -> Forecaster:
    """Raw forecaster when ``graph`` is None, otherwise an encoder-informed one."""
    rng = np.random.default_rng(seed)
    enc = None
    d_in = scenario.n_in
    if graph is not None:
        kw = dict(encoder_config or {})
        kw.setdefault("fs", fs)
        cfg = EncoderConfig(n_in=scenario.n_in, **kw)
        enc = NBgE.init(graph, cfg, rng)
        if len(enc.channel_nodes) != n_channels:
            raise ValueError(f"graph observes {len(enc.channel_nodes)} channels, data has {n_channels}")
        d_in = cfg.d0
    h = HEADS[head].init(d_in, scenario.k_out, rng, hidden=hidden)
    return Forecaster(h, enc)


# --------------------------------------------------------------------- training

class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.b1, self.b2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if self.wd:
                g = g + self.wd * p
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0
    huber_delta: float = 0.1


class TrainingError(RuntimeError):
    pass


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    seconds: float = 0.0


def train(model: Forecaster, dataset: ForecastDataset, scenario: Scenario, config: TrainConfig | None = None,
          seed=None) -> tuple[Forecaster, History]:
    """Minimize the Huber loss on the train split, keeping the parameters with the best validation loss."""
    cfg = config or TrainConfig()
    if any(len(dataset.split.get(k, ())) == 0 for k in ("train", "val")):
        raise ValueError("dataset needs non-empty train and val splits")
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    if model.scaler is None:
        model.scaler = Standardizer.fit(dataset.part("train"))
    xtr, ytr = scenario.split(model.scaler(dataset.part("train")))
    xva, yva = scenario.split(model.scaler(dataset.part("val")))
    params = model.params
    opt = Adam(params, cfg.lr, weight_decay=cfg.weight_decay)
    hist = History()
    best = {k: v.copy() for k, v in params.items()}
    n = len(xtr)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            pred = model.forward(xtr[idx], record=True)
            loss = huber_loss(pred, ytr[idx], cfg.huber_delta)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, batch {s // cfg.batch_size}")
            grads = model.backward(huber_grad(pred, ytr[idx], cfg.huber_delta))
            opt.step(params, grads)
            total += loss * len(idx)
        val = huber_loss(model.forward(xva), yva, cfg.huber_delta)
        if not np.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch} (train loss {total / n:.4g})")
        hist.train_loss.append(total / n)
        hist.val_loss.append(val)
        if val < hist.best_val:
            hist.best_val, hist.best_epoch = val, epoch
            best = {k: v.copy() for k, v in params.items()}
    model.set_params(best)
    hist.seconds = time.perf_counter() - t0
    log.info("trained %s in %.1fs, best val %.4g at epoch %d", scenario.name, hist.seconds, hist.best_val,
             hist.best_epoch)
    return model, hist


@dataclass
class MetricsReport:
    mae: float
    mse: float
    sdtw: float | None
    n_params: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(model: Forecaster, dataset: ForecastDataset, scenario: Scenario, split: str = "test",
             with_sdtw: bool = True, gamma: float = 0.1) -> MetricsReport:
    """Metrics on a split, in the data's original units."""
    if len(dataset.split.get(split, ())) == 0:
        raise ValueError(f"dataset has no {split!r} split")
    x, y = scenario.split(dataset.part(split))
    pred = model.predict(x)
    if with_sdtw:
        m = forecast_metrics(pred, y, gamma)
        return MetricsReport(m["mae"], m["mse"], m["sdtw"], model.n_params)
    err = pred - y
    return MetricsReport(float(np.mean(np.abs(err))), float(np.mean(err ** 2)), None, model.n_params)


# --------------------------------------------------------------------- protocol

@dataclass
class RunResult:
    seed: int
    val_loss: float
    test: MetricsReport
    seconds: float


@dataclass
class ProtocolResult:
    name: str
    scenario: str
    runs: list
    kept: list
    best: Forecaster | None = None

    def summary(self) -> dict:
        out = {"model": self.name, "scenario": self.scenario, "runs": len(self.runs), "kept": len(self.kept),
               "n_params": self.kept[0].test.n_params if self.kept else None}
        for metric in ("mae", "mse", "sdtw"):
            vals = [getattr(r.test, metric) for r in self.kept]
            if vals and all(v is not None for v in vals):
                out[metric] = float(np.mean(vals))
                out[f"{metric}_std"] = float(np.std(vals))
        return out


def run_protocol(name: str, make_model, dataset: ForecastDataset, scenario: Scenario,
                 config: TrainConfig | None = None, runs: int = 20, keep: int = 10, base_seed: int = 0,
                 with_sdtw: bool = True) -> ProtocolResult:
    """Train ``runs`` seeds, keep the ``keep`` best by validation loss and report their test metrics.

    ``make_model(seed)`` builds a fresh forecaster.
    """
    results = []
    for r in range(runs):
        seed = base_seed + r
        model, hist = train(make_model(seed), dataset, scenario, config, seed)
        rep = evaluate(model, dataset, scenario, with_sdtw=False)
        results.append((RunResult(seed, hist.best_val, rep, hist.seconds), model))
    results.sort(key=lambda rm: rm[0].val_loss)
    kept = []
    for res, model in results[:keep]:
        if with_sdtw:
            res.test = evaluate(model, dataset, scenario, with_sdtw=True)
        kept.append(res)
    return ProtocolResult(name, scenario.name, [r for r, _ in results], kept, results[0][1])
