"""Deterministic layered toy model with closed-form gradients.

A multilayer perceptron with tanh hidden units and either a
softmax/cross-entropy or squared-error head. Parameters live as one flat
vector per layer so that a cut layer maps to slicing the layer list.
Gradients are hand-derived; no autodiff dependency, bit-identical reruns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Seeded substreams, so data, weights, batches, and baseline draws never alias.
STREAM_DATA = 101
STREAM_SHARDS = 102
STREAM_INIT = 103
STREAM_BATCH = 104


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


class LayeredModel:
    """Architecture only; parameters are passed around as layer lists."""

    def __init__(self, layer_sizes, loss: str = "cross_entropy"):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if loss not in ("cross_entropy", "squared"):
            raise ValueError(f"unknown loss {loss!r}")
        self.layer_sizes = tuple(int(d) for d in layer_sizes)
        self.loss_kind = loss

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def shapes(self, k: int):
        """(out, in) of affine layer k, 1-based."""
        return self.layer_sizes[k], self.layer_sizes[k - 1]

    def layer_dim(self, k: int) -> int:
        out, inp = self.shapes(k)
        return out * inp + out

    def init_params(self, seed: int) -> list[np.ndarray]:
        rng = substream(seed, STREAM_INIT)
        params = []
        for k in range(1, self.n_layers + 1):
            out, inp = self.shapes(k)
            w = rng.standard_normal((out, inp)) / np.sqrt(inp)
            b = np.zeros(out)
            params.append(np.concatenate([w.ravel(), b]))
        return params

    def _unpack(self, p: np.ndarray, k: int):
        out, inp = self.shapes(k)
        return p[: out * inp].reshape(out, inp), p[out * inp:]

    def _forward(self, params, x):
        acts = [x]
        a = x
        for k in range(1, self.n_layers + 1):
            w, b = self._unpack(params[k - 1], k)
            z = a @ w.T + b
            a = z if k == self.n_layers else np.tanh(z)
            acts.append(a)
        return acts

    def _targets(self, y):
        if self.loss_kind == "squared" and np.asarray(y).ndim == 2:
            return np.asarray(y, dtype=float)
        onehot = np.zeros((len(y), self.layer_sizes[-1]))
        onehot[np.arange(len(y)), np.asarray(y, dtype=int)] = 1.0
        return onehot

    def loss(self, params, x, y) -> float:
        z = self._forward(params, x)[-1]
        n = len(x)
        if self.loss_kind == "squared":
            return float(0.5 * np.sum((z - self._targets(y)) ** 2) / n)
        zmax = z.max(axis=1, keepdims=True)
        logsumexp = zmax[:, 0] + np.log(np.sum(np.exp(z - zmax), axis=1))
        return float(np.sum(logsumexp - z[np.arange(n), np.asarray(y, dtype=int)]) / n)

    def loss_and_grads(self, params, x, y):
        """Mean loss over the batch and one flat gradient per layer."""
        acts = self._forward(params, x)
        z = acts[-1]
        n = len(x)
        if self.loss_kind == "squared":
            t = self._targets(y)
            loss = float(0.5 * np.sum((z - t) ** 2) / n)
            dz = (z - t) / n
        else:
            zmax = z.max(axis=1, keepdims=True)
            expz = np.exp(z - zmax)
            softmax = expz / expz.sum(axis=1, keepdims=True)
            labels = np.asarray(y, dtype=int)
            logsumexp = zmax[:, 0] + np.log(expz.sum(axis=1))
            loss = float(np.sum(logsumexp - z[np.arange(n), labels]) / n)
            dz = softmax.copy()
            dz[np.arange(n), labels] -= 1.0
            dz /= n
        grads: list[np.ndarray] = [None] * self.n_layers
        for k in range(self.n_layers, 0, -1):
            a_prev = acts[k - 1]
            w, _ = self._unpack(params[k - 1], k)
            gw = dz.T @ a_prev
            gb = dz.sum(axis=0)
            grads[k - 1] = np.concatenate([gw.ravel(), gb])
            if k > 1:
                da = dz @ w
                dz = da * (1.0 - a_prev**2)
        return loss, grads


@dataclass(frozen=True)
class DataShards:
    """A dataset plus its partition into per-device sample index sets."""

    x: np.ndarray
    y: np.ndarray
    device_indices: tuple[np.ndarray, ...]
    iid: bool

    @property
    def n_devices(self) -> int:
        return len(self.device_indices)

    def device_data(self, i: int):
        idx = self.device_indices[i]
        return self.x[idx], self.y[idx]


def make_dataset(n_samples: int, dim: int, classes: int, seed: int,
                 spread: float = 2.5, noise: float = 1.0):
    """Gaussian-mixture classification data with balanced labels."""
    rng = substream(seed, STREAM_DATA)
    means = spread * rng.standard_normal((classes, dim))
    y = np.arange(n_samples) % classes
    x = means[y] + noise * rng.standard_normal((n_samples, dim))
    perm = rng.permutation(n_samples)
    return x[perm], y[perm]


def make_shards(x, y, n_devices: int, iid: bool, seed: int,
                shards_per_device: int = 2) -> DataShards:
    """Partition samples across devices; non-IID deals sorted-label shards."""
    n = len(y)
    if n < n_devices:
        raise ValueError(f"{n} samples cannot cover {n_devices} devices")
    rng = substream(seed, STREAM_SHARDS)
    if iid:
        perm = rng.permutation(n)
        parts = np.array_split(perm, n_devices)
    else:
        order = np.argsort(y, kind="stable")
        shards = np.array_split(order, n_devices * shards_per_device)
        deal = rng.permutation(n_devices * shards_per_device)
        parts = [
            np.concatenate([shards[s] for s in deal[i::n_devices]])
            for i in range(n_devices)
        ]
    return DataShards(x=x, y=y, device_indices=tuple(parts), iid=iid)


def minibatch_indices(seed: int, device: int, round_idx: int, n_local: int,
                      batch: int) -> np.ndarray:
    """Per-(device, round) mini-batch draw with replacement; pure in its args."""
    rng = substream(seed, STREAM_BATCH, device, round_idx)
    return rng.integers(0, n_local, size=batch)
