import numpy as np
import pytest

from splitfed.profile import (LayerStats, ProfileError, build_profile,
                              cumulative_moment, load_profile, save_profile)

from conftest import random_profile


def _stats(fp, bp=None, act=1.0, grad=1.0, param=None, sigma=0.0, g=1.0):
    return LayerStats(fp, bp if bp is not None else 2 * fp, act, grad,
                      param if param is not None else fp, sigma, g)


def _write(tmp_path, text):
    path = tmp_path / "profile.csv"
    path.write_text(text)
    return path


HEADER = "layer,fp_flops_cum,bp_flops_cum,act_bits,grad_bits,param_bits_cum,sigma_sq,g_sq\n"


def test_prefix_sum_two_layers():
    prof = build_profile([_stats(1.0, g=4.0), _stats(2.0, g=1.0)])
    assert prof.g_cum.tolist() == [4.0, 5.0]
    assert cumulative_moment(prof, 1) == 4.0
    assert cumulative_moment(prof, 2) == 5.0


def test_cut_out_of_range():
    prof = build_profile([_stats(1.0), _stats(2.0)])
    with pytest.raises(ProfileError):
        cumulative_moment(prof, 0)
    with pytest.raises(ProfileError):
        cumulative_moment(prof, 3)


def test_non_monotone_rejected(tmp_path):
    path = _write(tmp_path, HEADER + "1,5,10,1,1,1,0,1\n2,3,12,1,1,2,0,1\n")
    with pytest.raises(ProfileError, match="non-monotone"):
        load_profile(path)


def test_empty_table_rejected(tmp_path):
    path = _write(tmp_path, HEADER)
    with pytest.raises(ProfileError, match="L >= 1"):
        load_profile(path)


def test_negative_entry_rejected(tmp_path):
    path = _write(tmp_path, HEADER + "1,1,2,-1,1,1,0,1\n")
    with pytest.raises(ProfileError):
        load_profile(path)


def test_bad_header_rejected(tmp_path):
    path = _write(tmp_path, "layer,bogus\n1,2\n")
    with pytest.raises(ProfileError, match="header"):
        load_profile(path)


def test_moment_below_variance_rejected():
    with pytest.raises(ProfileError, match="grad_sq_moment"):
        build_profile([_stats(1.0, sigma=2.0, g=1.0)])


def test_cumulative_moment_monotone_in_cut():
    for seed in range(20):
        prof = random_profile(np.random.default_rng(seed), 6)
        vals = [cumulative_moment(prof, j) for j in range(1, 7)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_roundtrip_bit_for_bit(tmp_path):
    prof = random_profile(np.random.default_rng(3), 5)
    path = tmp_path / "p.csv"
    save_profile(prof, path)
    back = load_profile(path)
    assert back.layers == prof.layers
    assert back.g_cum.tolist() == prof.g_cum.tolist()
    assert back.sigma_total == prof.sigma_total


def test_with_statistics_replaces_columns():
    prof = build_profile([_stats(1.0), _stats(2.0)])
    newer = prof.with_statistics([0.1, 0.2], [1.0, 2.0])
    assert newer.sigma_total == pytest.approx(0.3)
    assert newer.g_cum.tolist() == [1.0, 3.0]
    # latency columns untouched
    assert newer.layers[0].fp_flops_cum == 1.0
