"""Layer-wise model profile: per-layer compute, traffic, and gradient statistics.

Columns are cumulative where the downstream cost model consumes prefix
quantities (forward/backward FLOPs, client sub-model bits), per-layer
otherwise (activation/gradient payloads, gradient variance and second
moment). A profile is immutable after loading and safe to share.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

CSV_COLUMNS = (
    "layer",
    "fp_flops_cum",
    "bp_flops_cum",
    "act_bits",
    "grad_bits",
    "param_bits_cum",
    "sigma_sq",
    "g_sq",
)


class ProfileError(ValueError):
    """Raised when a profile file is malformed or violates invariants."""


@dataclass(frozen=True)
class LayerStats:
    """Constants for one layer (cut candidate) of the model."""

    fp_flops_cum: float   # forward cost of layers 1..j, per sample
    bp_flops_cum: float   # backward cost of layers 1..j, per sample
    act_bits: float       # activation payload at cut j, per sample
    grad_bits: float      # activation-gradient payload at cut j, per sample
    param_bits_cum: float  # client sub-model size with cut j
    grad_var: float       # per-layer gradient variance bound
    grad_sq_moment: float  # per-layer gradient second-moment bound


@dataclass(frozen=True)
class ModelProfile:
    """Validated layer table with derived prefix sums.

    ``g_cum[j-1]`` is the running sum of ``grad_sq_moment`` over layers
    1..j; ``sigma_total`` is the sum of ``grad_var`` over all layers.
    """

    layers: tuple[LayerStats, ...]
    g_cum: np.ndarray = field(repr=False)
    sigma_total: float = field(repr=False)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def column(self, name: str) -> np.ndarray:
        """Return one per-layer column as a float array (layer order)."""
        return np.array([getattr(s, name) for s in self.layers], dtype=float)

    def with_statistics(self, sigma_sq, g_sq) -> "ModelProfile":
        """Copy of this profile with the gradient statistics columns replaced."""
        sigma_sq = np.asarray(sigma_sq, dtype=float)
        g_sq = np.asarray(g_sq, dtype=float)
        if len(sigma_sq) != self.n_layers or len(g_sq) != self.n_layers:
            raise ProfileError("statistics length must match layer count")
        layers = tuple(
            replace(s, grad_var=float(v), grad_sq_moment=float(g))
            for s, v, g in zip(self.layers, sigma_sq, g_sq)
        )
        return build_profile(layers)


def build_profile(layers) -> ModelProfile:
    """Validate layer stats and derive prefix sums."""
    layers = tuple(
        LayerStats(*(float(getattr(s, name))
                     for name in LayerStats.__dataclass_fields__))
        for s in layers
    )
    if len(layers) < 1:
        raise ProfileError("L >= 1 required: profile has no layers")
    for j, s in enumerate(layers, start=1):
        for name in LayerStats.__dataclass_fields__:
            v = getattr(s, name)
            if not np.isfinite(v) or v < 0:
                raise ProfileError(f"layer {j}: {name} must be finite and >= 0, got {v}")
        if s.grad_sq_moment < s.grad_var:
            raise ProfileError(
                f"layer {j}: grad_sq_moment ({s.grad_sq_moment}) < grad_var ({s.grad_var})"
            )
    for name in ("fp_flops_cum", "bp_flops_cum", "param_bits_cum"):
        col = [getattr(s, name) for s in layers]
        if any(b <= a for a, b in zip(col, col[1:])):
            raise ProfileError(f"non-monotone cumulative column {name}: {col}")
    g_cum = np.cumsum([s.grad_sq_moment for s in layers])
    sigma_total = float(sum(s.grad_var for s in layers))
    return ModelProfile(layers=layers, g_cum=g_cum, sigma_total=sigma_total)


def load_profile(path) -> ModelProfile:
    """Load a profile CSV (header ``layer,fp_flops_cum,...,g_sq``, rows 1..L)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise ProfileError(
                f"bad header {reader.fieldnames}, expected {','.join(CSV_COLUMNS)}"
            )
        rows = list(reader)
    if not rows:
        raise ProfileError("L >= 1 required: profile table is empty")
    layers = []
    for j, row in enumerate(rows, start=1):
        try:
            idx = int(row["layer"])
            vals = {name: float(row[name]) for name in CSV_COLUMNS[1:]}
        except (TypeError, ValueError) as exc:
            raise ProfileError(f"row {j}: {exc}") from exc
        if idx != j:
            raise ProfileError(f"row {j}: layer index {idx} out of order")
        layers.append(
            LayerStats(
                fp_flops_cum=vals["fp_flops_cum"],
                bp_flops_cum=vals["bp_flops_cum"],
                act_bits=vals["act_bits"],
                grad_bits=vals["grad_bits"],
                param_bits_cum=vals["param_bits_cum"],
                grad_var=vals["sigma_sq"],
                grad_sq_moment=vals["g_sq"],
            )
        )
    return build_profile(layers)


def save_profile(profile: ModelProfile, path) -> None:
    """Write a profile CSV that reloads bit-for-bit (full-precision floats)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for j, s in enumerate(profile.layers, start=1):
            writer.writerow([
                j,
                repr(s.fp_flops_cum),
                repr(s.bp_flops_cum),
                repr(s.act_bits),
                repr(s.grad_bits),
                repr(s.param_bits_cum),
                repr(s.grad_var),
                repr(s.grad_sq_moment),
            ])


def cumulative_moment(profile: ModelProfile, cut: int) -> float:
    """Running sum of gradient second moments over layers 1..cut."""
    if not 1 <= cut <= profile.n_layers:
        raise ProfileError(f"cut {cut} out of range 1..{profile.n_layers}")
    return float(profile.g_cum[cut - 1])
