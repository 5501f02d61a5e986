"""Flat experiment configuration and the simulate -> window -> train -> report pipeline."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


from .bondgraph import dc_motor, load_dsl
from .bondmatrix import build_bond_matrix
from .dcmotor import ForecastDataset, build_dataset, read_csv, simulate_recordings
from .dualgraph import DualGraph, compile_dual_graph, parse_mapping
from .training import Forecaster, ProtocolResult, Scenario, TrainConfig, build_forecaster, run_protocol

ENCODER_KEYS = ("d0", "n_layers", "modes", "alpha_bgc", "sampling", "sampling_seed", "activation", "layer_init")


@dataclass
class ExperimentConfig:
    # simulator / data
    fs: float = 100.0
    duration: float = 660.0
    n_recordings: int = 5
    sim_seed: int = 0
    csv: list = field(default_factory=list)  # external recordings replace the simulator when set
    window: int = 600
    n_samples: int = 500
    data_seed: int = 0
    # bond graph
    graph: str = ""  # DSL path, empty for the bundled DC motor
    mapping: list = field(default_factory=lambda: ["ch0=e1", "ch1=f6"])
    # encoder
    d0: int | None = None
    n_layers: int = 3
    modes: list | None = None
    alpha_bgc: float = 0.5
    sampling: str = "lowest"
    sampling_seed: int = 0
    activation: str = "relu"
    layer_init: str = "uniform"
    # head and optimizer
    hidden: int = 256
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0
    huber_delta: float = 0.1
    # protocol
    runs: int = 20
    keep: int = 10
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python 3.10
            import tomli as tomllib

        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr, self.weight_decay, self.huber_delta)

    def encoder_kwargs(self) -> dict:
        kw = {k: getattr(self, k) for k in ENCODER_KEYS}
        if kw["modes"] is not None:
            kw["modes"] = tuple(kw["modes"])
        return kw


def make_dataset(cfg: ExperimentConfig) -> ForecastDataset:
    if cfg.csv:
        recs = [read_csv(p) for p in cfg.csv]
    else:
        recs = simulate_recordings(cfg.n_recordings, cfg.duration, cfg.fs, cfg.sim_seed)
    return build_dataset(recs, cfg.window, cfg.n_samples, cfg.data_seed)


def make_dual_graph(cfg: ExperimentConfig) -> DualGraph:
    g = load_dsl(cfg.graph) if cfg.graph else dc_motor()
    return compile_dual_graph(build_bond_matrix(g), parse_mapping(cfg.mapping))


def model_name(model: str, informed: bool) -> str:
    return f"{'NBgE+' if informed else ''}{model.capitalize() if model == 'linear' else model.upper()}"


def run_experiment(cfg: ExperimentConfig, scenario: Scenario, model: str = "linear", informed: bool = True,
                   dataset: ForecastDataset | None = None, with_sdtw: bool = True
                   ) -> tuple[ProtocolResult, Forecaster]:
    """Run the multi-seed protocol; returns the result and the model with the best validation loss."""
    ds = dataset if dataset is not None else make_dataset(cfg)
    graph = make_dual_graph(cfg) if informed else None
    n_ch = ds.windows.shape[1]

    def make(seed):
        return build_forecaster(model, scenario, n_ch, graph, cfg.encoder_kwargs(), fs=ds.fs,
                                hidden=cfg.hidden, seed=seed)

    res = run_protocol(model_name(model, informed), make, ds, scenario, cfg.train_config(), cfg.runs,
                       cfg.keep, cfg.seed, with_sdtw)
    return res, res.best


def write_results(res: ProtocolResult, path, cfg: ExperimentConfig | None = None) -> dict:
    out = {"summary": res.summary(),
           "runs": [{"seed": r.seed, "val_loss": r.val_loss, "seconds": r.seconds, **r.test.to_dict()}
                    for r in res.runs],
           "kept_seeds": [r.seed for r in res.kept],
           "config": cfg.to_dict() if cfg else None}
    Path(path).write_text(json.dumps(out, indent=1))
    return out


def format_table(summaries: list[dict], fmt: str = "md") -> str:
    cols = ["model", "scenario", "n_params", "mae", "mse", "sdtw"]
    if fmt == "json":
        return json.dumps(summaries, indent=1)
    if fmt == "csv":
        import csv
        import io

        buf = io.StringIO()
        keys = cols + ["mae_std", "mse_std", "sdtw_std", "runs", "kept"]
        w = csv.DictWriter(buf, keys, extrasaction="ignore")
        w.writeheader()
        w.writerows(summaries)
        return buf.getvalue()
    if fmt != "md":
        raise ValueError(f"unknown format {fmt!r}")

    def cell(s, k):
        v = s.get(k)
        if v is None:
            return "-"
        if k in ("mae", "mse", "sdtw"):
            return f"{v:.3f} ± {s.get(k + '_std', 0.0):.3f}"
        return str(v)

    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(cell(s, k) for k in cols) + " |" for s in summaries]
    return "\n".join(lines) + "\n"


def forecast_traces(model: Forecaster, ds: ForecastDataset, scenario: Scenario, index: int = 0, split="test"):
    """``(x, target, prediction)`` for one window of a split, in original units."""
    w = ds.part(split)[index:index + 1]
    x, y = scenario.split(w)
    return x[0], y[0], model.predict(x)[0]

