import math

import numpy as np
import pytest
from scipy import stats

from swipt_tfs.channel import ChannelConfig, generate, reference_instance, pathloss_db, sample_users


def test_pathloss_reference_points():
    assert pathloss_db(1.0) == pytest.approx(128.1)
    assert pathloss_db(0.1) == pytest.approx(90.5)
    # 128.1 + 37.6 log10(0.5), evaluated by hand
    assert pathloss_db(0.5) == pytest.approx(128.1 - 37.6 * 0.30102999566398120, abs=1e-12)
    assert pathloss_db(0.5) == pytest.approx(116.78, abs=0.01)
    assert np.allclose(pathloss_db(np.array([1.0, 0.1])), [128.1, 90.5])


@pytest.mark.parametrize("d", [0.0, -1.0, float("nan")])
def test_pathloss_rejects_bad_distance(d):
    with pytest.raises(ValueError):
        pathloss_db(d)


@pytest.mark.parametrize("kwargs", [dict(d_min=0.0), dict(d_min=2.0, d_max=1.0), dict(shadow_std=-1.0),
                                    dict(fading="nakagami"), dict(seed=-1)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        ChannelConfig(**kwargs)


def test_deterministic_pathloss_only():
    cfg = ChannelConfig(d_min=1.0, d_max=1.0, shadow_std=0.0, fading="none")
    g = generate(3, 5, cfg).g
    assert np.allclose(g, 10 ** (-12.81), rtol=1e-12)


def test_same_seed_same_gains():
    a = generate(4, 15, ChannelConfig(seed=42)).g
    b = generate(4, 15, ChannelConfig(seed=42)).g
    c = generate(4, 15, ChannelConfig(seed=43)).g
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_users_are_nested_across_counts():
    small = generate(3, 15, ChannelConfig(seed=5)).g
    big = generate(8, 15, ChannelConfig(seed=5)).g
    assert np.array_equal(small, big[:3])


def test_flat_mode_repeats_first_fading_value():
    cfg = ChannelConfig(seed=9, fading="rayleigh-flat")
    g = generate(3, 6, cfg).g
    assert np.allclose(g, g[:, :1])
    per_sub = generate(3, 6, ChannelConfig(seed=9)).g
    assert np.allclose(g[:, 0], per_sub[:, 0])


def test_gains_finite_positive():
    g = generate(8, 64, ChannelConfig(seed=1)).g
    assert np.all(np.isfinite(g)) and np.all(g > 0)


def test_draw_order_contract():
    cfg = ChannelConfig(seed=3)
    dist, shadow, fading = sample_users(2, 4, cfg)
    rng = np.random.Generator(np.random.Philox(3))
    for k in range(2):
        assert dist[k] == rng.uniform(cfg.d_min, cfg.d_max)
        assert shadow[k] == rng.normal(0.0, cfg.shadow_std)
        assert np.array_equal(fading[k], rng.exponential(1.0, size=4))


def test_law_of_large_numbers():
    # 10^5 fading draws and 10^5 shadowing draws
    _, shadow, fading = sample_users(100_000, 1, ChannelConfig(seed=2024))
    assert 0.99 <= fading.mean() <= 1.01
    assert abs(shadow.mean()) <= 0.05


def test_fading_ks_and_shadow_std():
    _, shadow, fading = sample_users(10_000, 1, ChannelConfig(seed=7))
    assert stats.kstest(fading.ravel(), "expon").pvalue > 0.01
    assert abs(shadow.std(ddof=1) - 4.0) <= 0.05 * 4.0


def test_reference_instance_defaults():
    inst = reference_instance()
    assert (inst.K, inst.N) == (4, 15)
    assert np.all(inst.qos.min_rate == 5e6)
    assert np.all(inst.qos.min_energy == 36e-6)
    assert inst.params.efficiency == 0.2
    assert 10 * math.log10(inst.params.max_power * 1e3) == pytest.approx(17.0)


@pytest.mark.parametrize("K,N", [(0, 3), (2, 0)])
def test_generate_rejects_empty(K, N):
    with pytest.raises(ValueError):
        generate(K, N)
