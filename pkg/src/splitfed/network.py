"""Per-round device and server resources with deterministic seeded sampling.

Every quantity is a raw rate: compute in FLOPS, links in bits/s. Sampling
is a pure function of (distribution, n_devices, round, seed), so scenario
runs can regenerate any round's snapshot without storing it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Table-style defaults: 20 TFLOPS server, [1,2] TFLOPS devices,
# [75,80] Mbps uplinks, 370 Mbps downlinks, 400 Mbps inter-server.
TFLOPS = 1e12
MBPS = 1e6


@dataclass(frozen=True)
class FieldSpec:
    """Sampling spec for one resource field: constant or uniform(lo, hi)."""

    kind: str = "constant"  # "constant" | "uniform"
    value: float = 0.0
    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self):
        if self.kind == "constant":
            if self.value <= 0:
                raise ValueError(f"constant resource must be > 0, got {self.value}")
        elif self.kind == "uniform":
            if not (0 < self.lo <= self.hi):
                raise ValueError(f"uniform bounds need 0 < lo <= hi, got [{self.lo}, {self.hi}]")
        else:
            raise ValueError(f"unknown field spec kind {self.kind!r}")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "constant":
            return self.value
        return float(rng.uniform(self.lo, self.hi))


def constant(v: float) -> FieldSpec:
    return FieldSpec(kind="constant", value=float(v))


def uniform(lo: float, hi: float) -> FieldSpec:
    return FieldSpec(kind="uniform", lo=float(lo), hi=float(hi))


@dataclass(frozen=True)
class DeviceResources:
    compute: float    # f_i, FLOPS
    up_edge: float    # device -> edge server, bits/s
    down_edge: float  # edge server -> device, bits/s
    up_fed: float     # device -> fed server, bits/s
    down_fed: float   # fed server -> device, bits/s


@dataclass(frozen=True)
class ServerResources:
    compute: float   # f_s, FLOPS
    to_fed: float    # edge server -> fed server, bits/s
    from_fed: float  # fed server -> edge server, bits/s


@dataclass(frozen=True)
class NetworkSnapshot:
    devices: tuple[DeviceResources, ...]
    server: ServerResources
    round: int

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    def device_column(self, name: str) -> np.ndarray:
        return np.array([getattr(d, name) for d in self.devices], dtype=float)


DEVICE_FIELDS = ("compute", "up_edge", "down_edge", "up_fed", "down_fed")
SERVER_FIELDS = ("compute", "to_fed", "from_fed")


@dataclass(frozen=True)
class ResourceDistribution:
    """Sampling specs for every resource field.

    Device fields take either one spec (shared by all devices) or a
    sequence of per-device specs. ``cv`` > 0 adds multiplicative gaussian
    measurement noise with that coefficient of variation, clamped at 1%
    of the nominal draw so latency denominators stay positive.
    """

    compute: object = field(default_factory=lambda: uniform(1 * TFLOPS, 2 * TFLOPS))
    up_edge: object = field(default_factory=lambda: uniform(75 * MBPS, 80 * MBPS))
    down_edge: object = field(default_factory=lambda: constant(370 * MBPS))
    up_fed: object = field(default_factory=lambda: uniform(75 * MBPS, 80 * MBPS))
    down_fed: object = field(default_factory=lambda: constant(370 * MBPS))
    server_compute: FieldSpec = field(default_factory=lambda: constant(20 * TFLOPS))
    to_fed: FieldSpec = field(default_factory=lambda: constant(400 * MBPS))
    from_fed: FieldSpec = field(default_factory=lambda: constant(400 * MBPS))
    cv: float = 0.0

    def __post_init__(self):
        if self.cv < 0:
            raise ValueError(f"cv must be >= 0, got {self.cv}")

    def device_spec(self, name: str, i: int, n: int) -> FieldSpec:
        spec = getattr(self, name)
        if isinstance(spec, FieldSpec):
            return spec
        specs = tuple(spec)
        if len(specs) != n:
            raise ValueError(f"{name}: got {len(specs)} per-device specs for {n} devices")
        return specs[i]


def _noisy(nominal: float, cv: float, rng: np.random.Generator) -> float:
    if cv == 0.0:
        return nominal
    # Clamp at 1% of nominal: measurement noise must not kill a rate.
    return nominal * max(1.0 + cv * rng.standard_normal(), 0.01)


def sample_snapshot(
    dist: ResourceDistribution, n_devices: int, round: int, seed: int
) -> NetworkSnapshot:
    """Draw one round's resources; pure function of its arguments."""
    if n_devices < 1:
        raise ValueError(f"n_devices must be >= 1, got {n_devices}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(round,)))
    devices = []
    for i in range(n_devices):
        vals = {}
        for name in DEVICE_FIELDS:
            spec = dist.device_spec(name, i, n_devices)
            vals[name] = _noisy(spec.sample(rng), dist.cv, rng)
        devices.append(DeviceResources(**vals))
    server = ServerResources(
        compute=_noisy(dist.server_compute.sample(rng), dist.cv, rng),
        to_fed=_noisy(dist.to_fed.sample(rng), dist.cv, rng),
        from_fed=_noisy(dist.from_fed.sample(rng), dist.cv, rng),
    )
    return NetworkSnapshot(devices=tuple(devices), server=server, round=round)
