import pytest

from splitfed.network import (MBPS, TFLOPS, ResourceDistribution, constant,
                              sample_snapshot, uniform)


def _constant_dist(cv=0.0):
    return ResourceDistribution(
        compute=constant(1.5 * TFLOPS), up_edge=constant(77 * MBPS),
        down_edge=constant(370 * MBPS), up_fed=constant(77 * MBPS),
        down_fed=constant(370 * MBPS), server_compute=constant(20 * TFLOPS),
        to_fed=constant(400 * MBPS), from_fed=constant(400 * MBPS), cv=cv,
    )


def test_constants_echoed():
    snap = sample_snapshot(_constant_dist(), 3, round=5, seed=1)
    assert snap.server.compute == 20 * TFLOPS
    assert snap.server.to_fed == 400 * MBPS
    for dev in snap.devices:
        assert dev.compute == 1.5 * TFLOPS
        assert dev.up_edge == 77 * MBPS
        assert dev.down_edge == 370 * MBPS


def test_uniform_support():
    dist = ResourceDistribution()  # devices uniform in [1, 2] TFLOPS
    for seed in range(25):
        snap = sample_snapshot(dist, 6, round=seed, seed=seed * 17 + 3)
        for dev in snap.devices:
            assert 1 * TFLOPS <= dev.compute <= 2 * TFLOPS
            assert 75 * MBPS <= dev.up_edge <= 80 * MBPS


def test_determinism_and_round_variation():
    dist = ResourceDistribution()
    a = sample_snapshot(dist, 4, round=2, seed=9)
    b = sample_snapshot(dist, 4, round=2, seed=9)
    c = sample_snapshot(dist, 4, round=3, seed=9)
    d = sample_snapshot(dist, 4, round=2, seed=10)
    assert a == b
    assert a != c
    assert a != d


def test_zero_cv_matches_noiseless():
    base = sample_snapshot(_constant_dist(cv=0.0), 4, round=1, seed=5)
    noisy = sample_snapshot(_constant_dist(cv=0.0), 4, round=1, seed=5)
    assert base == noisy


def test_noise_clamped_positive():
    snap = sample_snapshot(_constant_dist(cv=50.0), 8, round=0, seed=2)
    for dev in snap.devices:
        assert dev.compute >= 0.01 * 1.5 * TFLOPS - 1e-6
        assert dev.up_edge > 0


def test_invalid_bounds_rejected():
    with pytest.raises(ValueError):
        uniform(2.0, 1.0)
    with pytest.raises(ValueError):
        uniform(0.0, 1.0)
    with pytest.raises(ValueError):
        constant(-1.0)
    with pytest.raises(ValueError):
        ResourceDistribution(cv=-0.5)
    with pytest.raises(ValueError):
        sample_snapshot(ResourceDistribution(), 0, 0, 0)


def test_per_device_specs():
    dist = ResourceDistribution(
        up_edge=(constant(8 * MBPS), constant(80 * MBPS), constant(80 * MBPS)),
    )
    snap = sample_snapshot(dist, 3, round=0, seed=4)
    assert snap.devices[0].up_edge == 8 * MBPS
    assert snap.devices[1].up_edge == 80 * MBPS
    with pytest.raises(ValueError, match="per-device"):
        sample_snapshot(dist, 2, round=0, seed=4)
