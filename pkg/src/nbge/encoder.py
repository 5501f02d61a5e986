"""Neural bond-graph encoder: scaler layer, stacked bond-graph layers and the summed output projection.

Forward passes are batched (``B x V x d0`` node features, time on the last axis)
and record what :meth:`NBgE.backward` needs for exact reverse-mode gradients.
Complex edge operators are stored as separate real and imaginary arrays.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .dualgraph import DualGraph
from .spectral import ModeSelection, n_modes

CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    n_in: int
    d0: int | None = None
    n_layers: int = 3
    modes: tuple[int, ...] | None = None
    alpha_bgc: float = 0.5
    sampling: str = "lowest"
    sampling_seed: int = 0
    fs: float = 1.0
    activation: str = "relu"
    layer_init: str = "uniform"

    def __post_init__(self):
        if self.d0 is None:
            self.d0 = self.n_in
        avail = n_modes(self.d0)
        if self.modes is None:
            self.modes = (avail,) * self.n_layers
        self.modes = tuple(int(m) for m in self.modes)
        if len(self.modes) == 1 and self.n_layers > 1:
            self.modes = self.modes * self.n_layers
        if len(self.modes) != self.n_layers:
            raise ValueError(f"need {self.n_layers} mode counts, got {len(self.modes)}")
        if any(m < 1 or m > avail for m in self.modes):
            raise ValueError(f"mode counts {self.modes} must lie in 1..{avail} for d0={self.d0}")
        if not 0.0 <= self.alpha_bgc <= 1.0:
            raise ValueError("alpha_bgc must lie in [0, 1]")
        if self.sampling not in ("lowest", "random"):
            raise ValueError(f"unknown sampling policy {self.sampling!r}")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.layer_init not in ("uniform", "near-identity"):
            raise ValueError(f"unknown layer_init {self.layer_init!r}")

    @property
    def alpha_skip(self) -> float:
        return 1.0 - self.alpha_bgc

    def selections(self) -> list[ModeSelection]:
        avail = n_modes(self.d0)
        if self.sampling == "lowest":
            return [ModeSelection.lowest(m, avail) for m in self.modes]
        return [ModeSelection.random(m, avail, self.sampling_seed + l) for l, m in enumerate(self.modes)]


def _uniform(rng, shape, fan_in):
    a = fan_in ** -0.5
    return rng.uniform(-a, a, size=shape)


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``sum_{batch, node} a^T b`` for ``B x V x d`` arrays."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _pairwise(s: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """``out[..., p, :] = s[..., p, :] @ phi[p]`` for any leading batch shape."""
    lead = s.shape[:-2]
    flat = s.reshape(-1, *s.shape[-2:]).transpose(1, 0, 2)
    return (flat @ phi).transpose(1, 0, 2).reshape(*lead, s.shape[-2], phi.shape[-1])


def _rfft_weights(n: int) -> np.ndarray:
    w = np.full(n_modes(n), 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


class NBgE:
    """Encoder bound to a dual graph. ``params`` maps names to float arrays."""

    def __init__(self, graph: DualGraph, config: EncoderConfig, params: dict[str, np.ndarray]):
        self.graph = graph
        self.config = config
        self.params = params
        self.pairs = graph.pairs()
        self.selections = config.selections()
        V, P = graph.n_nodes, len(self.pairs)
        self.src = np.array([s for s, _ in self.pairs], dtype=int)
        self.dst = np.array([d for _, d in self.pairs], dtype=int)
        self.dst_incidence = np.zeros((V, P))
        self.src_incidence = np.zeros((V, P))
        if P:
            self.dst_incidence[self.dst, np.arange(P)] = 1.0
            self.src_incidence[self.src, np.arange(P)] = 1.0
        # mean over in-neighbours plus the node itself
        self.divisor = 1.0 + self.dst_incidence.sum(axis=1)
        obs = graph.observed
        self.channel_nodes = np.array([n.id for n in obs], dtype=int)
        if sorted(n.channel for n in obs) != list(range(len(obs))):
            raise ValueError("observed channels must be numbered 0..C-1")
        self._cache = None

    # ------------------------------------------------------------------ init
    @classmethod
    def init(cls, graph: DualGraph, config: EncoderConfig, rng=None) -> "NBgE":
        """Fresh encoder with edge operators set to their physical values."""
        rng = np.random.default_rng(rng)
        d0, n_in, V = config.d0, config.n_in, graph.n_nodes
        p: dict[str, np.ndarray] = {}
        a_in = n_in ** -0.5
        if n_in == d0:
            p["scaler.W"] = np.eye(d0) + 0.1 * rng.uniform(-a_in, a_in, size=(n_in, d0))
        else:
            p["scaler.W"] = _uniform(rng, (n_in, d0), n_in)
        p["scaler.b"] = _uniform(rng, (d0,), n_in)
        p["scaler.embed"] = _uniform(rng, (V, d0), n_in)
        pairs = graph.pairs()
        for l, sel in enumerate(config.selections(), start=1):
            m = len(sel)
            phi = np.zeros((len(pairs), m, m), dtype=complex)
            for k, (s, d) in enumerate(pairs):
                diag = graph.pair_operator(s, d, d0, config.fs)[sel.array]
                phi[k] = np.diag(diag)
            p[f"bgl{l}.phi_re"] = phi.real.copy()
            p[f"bgl{l}.phi_im"] = phi.imag.copy()
            if config.layer_init == "near-identity":
                p[f"bgl{l}.W"] = np.eye(d0) + 0.1 * _uniform(rng, (d0, d0), d0)
            else:
                p[f"bgl{l}.W"] = _uniform(rng, (d0, d0), d0)
            p[f"bgl{l}.B"] = _uniform(rng, (d0,), d0)
        for l in range(1, config.n_layers + 1):
            if config.layer_init == "near-identity":
                p[f"att{l}.W"] = np.eye(d0) / config.n_layers + 0.1 * _uniform(rng, (d0, d0), d0)
            else:
                p[f"att{l}.W"] = _uniform(rng, (d0, d0), d0)
            p[f"att{l}.B"] = _uniform(rng, (d0,), d0)
        return cls(graph, config, p)

    def phi(self, layer: int) -> np.ndarray:
        return self.params[f"bgl{layer}.phi_re"] + 1j * self.params[f"bgl{layer}.phi_im"]

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # --------------------------------------------------------------- forward
    def node_inputs(self, x: np.ndarray) -> np.ndarray:
        """Scatter channel windows ``B x C x n_in`` onto the nodes; unobserved nodes get zeros."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[None]
        B, C, N = x.shape
        if C != len(self.channel_nodes) or N != self.config.n_in:
            raise ValueError(f"expected (B, {len(self.channel_nodes)}, {self.config.n_in}) input, got {x.shape}")
        xn = np.zeros((B, self.graph.n_nodes, N))
        xn[:, self.channel_nodes] = x
        return xn

    def scaler(self, xn: np.ndarray) -> np.ndarray:
        p = self.params
        return xn @ p["scaler.W"] + p["scaler.b"] + p["scaler.embed"]

    def bgc(self, layer: int, h: np.ndarray, cache: dict | None = None) -> np.ndarray:
        """One bond-graph convolution on ``B x V x d0`` features."""
        sel = self.selections[layer - 1].array
        n = self.config.d0
        if h.shape[-1] != n or h.shape[-2] != self.graph.n_nodes:
            raise ValueError(f"expected (..., {self.graph.n_nodes}, {n}) features, got {h.shape}")
        spec = np.fft.rfft(h, axis=-1)
        s = spec[..., sel]
        s_src = s[..., self.src, :]
        msg = _pairwise(s_src, self.phi(layer))
        agg = self.dst_incidence @ msg
        upd = (agg + s) / self.divisor[:, None]
        full = spec.copy()
        full[..., sel] = upd
        if cache is not None:
            cache["s_src"] = s_src
        return np.fft.irfft(full, n=n, axis=-1)

    def _act(self, z):
        return np.maximum(z, 0.0) if self.config.activation == "relu" else z

    def bgl(self, layer: int, h: np.ndarray, cache: dict | None = None) -> np.ndarray:
        p = self.params
        a = self.config.alpha_bgc
        ht = self.bgc(layer, h, cache)
        mix = a * ht + (1 - a) * h
        z = mix @ p[f"bgl{layer}.W"] + p[f"bgl{layer}.B"]
        if cache is not None:
            cache.update(h_in=h, mix=mix, z=z)
        return self._act(z)

    def forward(self, x: np.ndarray, record: bool = False) -> np.ndarray:
        """Encode channel windows ``B x C x n_in`` into ``B x V x d0`` node representations."""
        p = self.params
        xn = self.node_inputs(x)
        h = self.scaler(xn)
        caches = []
        out = 0.0
        for l in range(1, self.config.n_layers + 1):
            c = {} if record else None
            h = self.bgl(l, h, c)
            if record:
                c["h_out"] = h
                caches.append(c)
            out = out + h @ p[f"att{l}.W"] + p[f"att{l}.B"]
        if record:
            self._cache = {"xn": xn, "layers": caches}
        return out

    __call__ = forward

    def observed_rows(self, h_out: np.ndarray) -> np.ndarray:
        """Rows of the observed nodes, ordered by channel: ``B x C x d0``."""
        return h_out[..., self.channel_nodes, :]

    # -------------------------------------------------------------- backward
    def backward(self, g_out: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given ``dL/dH_out``; needs ``forward(record=True)``."""
        if self._cache is None:
            raise RuntimeError("call forward(..., record=True) before backward")
        p, cfg = self.params, self.config
        n, a = cfg.d0, cfg.alpha_bgc
        w = _rfft_weights(n)
        grads: dict[str, np.ndarray] = {}
        g_h = np.zeros_like(g_out)
        for l in range(cfg.n_layers, 0, -1):
            c = self._cache["layers"][l - 1]
            grads[f"att{l}.W"] = _outer_sum(c["h_out"], g_out)
            grads[f"att{l}.B"] = g_out.reshape(-1, n).sum(axis=0)
            g_h = g_h + g_out @ p[f"att{l}.W"].T
            g_z = g_h * (c["z"] > 0) if cfg.activation == "relu" else g_h
            grads[f"bgl{l}.W"] = _outer_sum(c["mix"], g_z)
            grads[f"bgl{l}.B"] = g_z.reshape(-1, n).sum(axis=0)
            g_mix = g_z @ p[f"bgl{l}.W"].T
            g_prev = (1 - a) * g_mix
            # through irfft: complex gradient of the padded spectrum
            g_full = np.fft.rfft(a * g_mix, axis=-1) * (w / n)
            sel = self.selections[l - 1].array
            g_upd = g_full[..., sel] / self.divisor[:, None]
            g_spec = g_full.copy()
            g_spec[..., sel] = 0.0
            g_msg = self.dst_incidence.T @ g_upd
            g_phi = np.swapaxes(np.conj(c["s_src"]), 0, 1).transpose(0, 2, 1) @ np.swapaxes(g_msg, 0, 1)
            grads[f"bgl{l}.phi_re"] = g_phi.real
            grads[f"bgl{l}.phi_im"] = g_phi.imag
            g_s_src = _pairwise(g_msg, np.conj(self.phi(l)).transpose(0, 2, 1))
            g_s = g_upd + self.src_incidence @ g_s_src
            g_spec[..., sel] += g_s
            # through rfft
            g_prev = g_prev + n * np.fft.irfft(g_spec / w, n=n, axis=-1)
            g_h = g_prev
        xn = self._cache["xn"]
        grads["scaler.W"] = _outer_sum(xn, g_h)
        grads["scaler.b"] = g_h.reshape(-1, n).sum(axis=0)
        grads["scaler.embed"] = g_h.reshape(-1, self.graph.n_nodes, n).sum(axis=0)
        return grads

    # ------------------------------------------------------------ checkpoint
    def state_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "graph": self.graph.to_dict(),
        }

    def save(self, path) -> None:
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays["meta"] = np.array(json.dumps(self.state_dict()))
        np.savez(path, **arrays)

    @classmethod
    def from_arrays(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "NBgE":
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = dict(meta["config"])
        cfg["modes"] = tuple(cfg["modes"])
        return cls(DualGraph.from_dict(meta["graph"]), EncoderConfig(**cfg), dict(arrays))

    @classmethod
    def load(cls, path) -> "NBgE":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            arrays = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        return cls.from_arrays(meta, arrays)
