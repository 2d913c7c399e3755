"""Parameter initialization and the AdaDelta optimizer."""

from __future__ import annotations

import hashlib

import numpy as np

from .tape import ShapeMismatchError


def derive_seed(master, name) -> int:
    """A named substream seed, stable across platforms and creation order."""
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def init_params(shape, seed) -> np.ndarray:
    """Scaled-uniform weight init: samples in ±sqrt(6 / (fan_in + fan_out)).

    1-d shapes are treated as a single output row (fan_out 1). Biases are
    not drawn here; they start at zero via :func:`zeros`.
    """
    if isinstance(shape, int):
        shape = (shape,)
    if len(shape) == 2:
        fan = shape[0] + shape[1]
    elif len(shape) == 1:
        fan = 1 + shape[0]
    elif len(shape) == 0:
        fan = 2
    else:
        raise ShapeMismatchError(f"unsupported weight shape {shape}")
    bound = np.sqrt(6.0 / fan)
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=shape)


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=np.float64)


class AdaDelta:
    """Per-parameter AdaDelta state and update rule.

    E[g²] ← ρE[g²] + (1−ρ)g²
    Δx    = −sqrt((E[Δx²]+ε)/(E[g²]+ε)) · g
    E[Δx²]← ρE[Δx²] + (1−ρ)Δx²

    Parameters missing from a gradient map are treated as having g = 0:
    accumulators decay, values stay put.
    """

    def __init__(self, params, rho=0.95, eps=1e-6):
        self.params = dict(params)
        self.rho = float(rho)
        self.eps = float(eps)
        self.eg = {n: np.zeros_like(p.value) for n, p in self.params.items()}
        self.edx = {n: np.zeros_like(p.value) for n, p in self.params.items()}

    def step(self, grads):
        rho, eps = self.rho, self.eps
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                self.eg[name] *= rho
                self.edx[name] *= rho
                continue
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.value.shape:
                raise ShapeMismatchError(
                    f"gradient for {name}: {g.shape} vs {p.value.shape}"
                )
            eg = self.eg[name]
            edx = self.edx[name]
            eg *= rho
            eg += (1.0 - rho) * g * g
            dx = -np.sqrt((edx + eps) / (eg + eps)) * g
            edx *= rho
            edx += (1.0 - rho) * dx * dx
            p.value += dx

    def state_arrays(self) -> dict:
        """Flat name→array view of the accumulators, for checkpoints."""
        out = {}
        for name in self.params:
            out[f"opt.eg.{name}"] = self.eg[name]
            out[f"opt.edx.{name}"] = self.edx[name]
        return out

    def load_state_arrays(self, arrays):
        for name, p in self.params.items():
            for store, key in ((self.eg, f"opt.eg.{name}"),
                               (self.edx, f"opt.edx.{name}")):
                arr = np.asarray(arrays[key], dtype=np.float64)
                if arr.shape != p.value.shape:
                    raise ShapeMismatchError(
                        f"optimizer state {key}: {arr.shape} vs {p.value.shape}"
                    )
                store[name][...] = arr
