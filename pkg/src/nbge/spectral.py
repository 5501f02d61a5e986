"""Half-spectrum DFT, frequency-domain integration/derivation operators and mode sampling."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


def n_modes(n_time: int) -> int:
    """Number of half-spectrum modes of a real signal of length ``n_time``."""
    return n_time // 2 + 1


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray  # complex, last axis = modes 0..N//2
    n_time: int
    fs: float = 1.0

    def __post_init__(self):
        if self.values.shape[-1] != n_modes(self.n_time):
            raise ValueError(f"expected {n_modes(self.n_time)} modes, got {self.values.shape[-1]}")

    @property
    def frequencies(self) -> np.ndarray:
        return np.fft.rfftfreq(self.n_time, d=1.0 / self.fs)


def dft(x, fs: float = 1.0) -> Spectrum:
    """Forward DFT over the last axis, keeping modes ``0..N//2``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    return Spectrum(np.fft.rfft(x, axis=-1), n, fs)


def idft(s: Spectrum) -> np.ndarray:
    return np.fft.irfft(s.values, n=s.n_time, axis=-1)


class OperatorKind(str, Enum):
    IDENTITY = "identity"
    SCALAR = "scalar"
    INTEGRATE = "integrate"
    DERIVE = "derive"


@dataclass(frozen=True)
class FreqOperator:
    kind: OperatorKind
    alpha: float
    diagonal: np.ndarray

    def __call__(self, s: Spectrum) -> Spectrum:
        return Spectrum(s.values * self.diagonal, s.n_time, s.fs)

    def __matmul__(self, other: "FreqOperator") -> np.ndarray:
        return self.diagonal * other.diagonal


def integration_diagonal(n_time: int, fs: float) -> np.ndarray:
    k = np.arange(n_modes(n_time))
    d = np.zeros(k.shape, dtype=complex)
    d[1:] = (1.0 / (2 * np.pi * fs)) * n_time / (1j * k[1:])
    return d


def derivation_diagonal(n_time: int, fs: float) -> np.ndarray:
    k = np.arange(n_modes(n_time))
    return 2 * np.pi * fs * 1j * k / n_time


def make_operator(kind, alpha: float, n_time: int, fs: float = 1.0) -> FreqOperator:
    """Diagonal operator over the half spectrum, scaled by ``alpha``.

    The integration operator maps the DC mode to 0.
    """
    kind = OperatorKind(kind)
    if alpha == 0 or not np.isfinite(alpha):
        raise ValueError("operator scale must be a finite nonzero real")
    if kind in (OperatorKind.IDENTITY, OperatorKind.SCALAR):
        base = np.ones(n_modes(n_time), dtype=complex)
    elif kind == OperatorKind.INTEGRATE:
        base = integration_diagonal(n_time, fs)
    else:
        base = derivation_diagonal(n_time, fs)
    return FreqOperator(kind, float(alpha), alpha * base)


@dataclass(frozen=True)
class ModeSelection:
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("mode indices must be strictly increasing")
        if idx and idx[0] < 0:
            raise ValueError("mode indices must be nonnegative")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    def check(self, available: int) -> None:
        if len(self.indices) > available or (self.indices and self.indices[-1] >= available):
            raise IndexError(f"mode selection {self.indices} exceeds {available} available modes")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=int)

    @classmethod
    def lowest(cls, d: int, available: int) -> "ModeSelection":
        if d > available:
            raise IndexError(f"cannot select {d} of {available} modes")
        return cls(tuple(range(d)))

    @classmethod
    def random(cls, d: int, available: int, seed: int) -> "ModeSelection":
        if d > available:
            raise IndexError(f"cannot select {d} of {available} modes")
        rng = np.random.default_rng(seed)
        return cls(tuple(sorted(rng.choice(available, size=d, replace=False).tolist())))


def sample(spec: np.ndarray, sel: ModeSelection) -> np.ndarray:
    """Gather the selected modes along the last axis."""
    sel.check(spec.shape[-1])
    return spec[..., sel.array]


def pad(prev: np.ndarray, updated: np.ndarray, sel: ModeSelection) -> np.ndarray:
    """Copy of ``prev`` with the selected modes overwritten by ``updated``."""
    sel.check(prev.shape[-1])
    if updated.shape[:-1] != prev.shape[:-1] or updated.shape[-1] != len(sel):
        raise ValueError(f"shape mismatch: prev {prev.shape}, updated {updated.shape}, {len(sel)} modes")
    out = np.array(prev, dtype=np.result_type(prev, updated), copy=True)
    out[..., sel.array] = updated
    return out
