import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from omniwalk.mathkit import ConfigurationError, RngStream
from omniwalk.sim2real import (
    COMMAND,
    ENCODER,
    GYRO,
    VELOCITY,
    FrictionConfig,
    LatencyBuffer,
    LatencyConfig,
    NoiseConfig,
    TransferConfig,
    apply_pd_noise,
    apply_sensor_noise,
    delayed_observation,
    filter_action,
    make_action_filter,
    sample_episode_randomization,
)


def test_randomization_ranges_and_means():
    rng = RngStream(1)
    mus = []
    for _ in range(20_000):
        r = sample_episode_randomization(NoiseConfig(), FrictionConfig(), LatencyConfig(), 16, rng)
        assert np.all((r.pd_scales >= 0.9) & (r.pd_scales <= 1.1))
        assert 0.4 <= r.mu_tangential <= 0.8 and 0.1 <= r.mu_torsional <= 0.3
        assert 0.0 <= r.latency <= 0.05
        mus.append(r.mu_tangential)
    assert abs(np.mean(mus) - 0.6) < 0.005
    r = sample_episode_randomization(NoiseConfig(pd_scale=0.0), FrictionConfig(), LatencyConfig(),
                                     5, rng)
    assert np.array_equal(r.pd_scales, np.ones(5))


def test_friction_mean_over_many_episodes():
    rng = RngStream(2)
    mu = [sample_episode_randomization(NoiseConfig(), FrictionConfig(), LatencyConfig(), 1,
                                       rng).mu_tangential for _ in range(100_000)]
    assert abs(np.mean(mu) - 0.6) < 0.005


def test_pd_noise_examples():
    assert np.allclose(apply_pd_noise([0.1, -0.1], [1.1, 0.9]), [0.11, -0.09], atol=1e-16)
    d = np.array([0.03, -0.07])
    assert np.array_equal(apply_pd_noise(d, np.ones(2)), d)
    assert not apply_pd_noise(np.zeros(2), [1.1, 0.95]).any()
    with pytest.raises(ValueError):
        apply_pd_noise([0.1], [1.0, 1.0])


def test_sensor_noise_roles():
    rng = RngStream(3)
    x = np.array([0.3, -0.2, 0.5, 0.1])
    roles = [ENCODER, GYRO, VELOCITY, COMMAND]
    zero = NoiseConfig(0.1, 0.0, 0.0, 0.0, 0.0)
    assert np.array_equal(apply_sensor_noise(x, roles, zero, rng), x)
    y = apply_sensor_noise(x, roles, NoiseConfig(), rng)
    assert y[3] == x[3]
    with pytest.raises(ConfigurationError):
        apply_sensor_noise(x, [ENCODER, GYRO, VELOCITY, "temperature"], NoiseConfig(), rng)
    with pytest.raises(ConfigurationError):
        apply_sensor_noise(x, [ENCODER], NoiseConfig(), rng)


def test_encoder_noise_std_and_mean():
    rng = RngStream(4)
    n = 1_000_000
    y = apply_sensor_noise(np.zeros(n), [ENCODER] * n, NoiseConfig(), rng)
    assert y.std() == pytest.approx(1e-3, rel=0.02)
    assert abs(y.mean()) < 5 * 1e-3 / math.sqrt(n)


def _buffer(latency, period=0.025, values=None):
    b = LatencyBuffer(period, 0.05, latency)
    values = values if values is not None else [np.array([k, -2.0 * k]) for k in range(5)]
    for k, v in enumerate(values):
        b.record(k * period, v)
    return b


def test_latency_examples():
    now = 4 * 0.025
    assert np.array_equal(delayed_observation(_buffer(0.0), now), [4, -8])
    assert np.array_equal(delayed_observation(_buffer(0.025), now), [3, -6])
    mid = delayed_observation(_buffer(0.0125), now)
    assert np.array_equal(mid, [3.5, -7.0])


def test_latency_exact_on_dyadic_grid():
    # power-of-two times make every interpolation weight exact
    vals = [np.array([0.1 * k, math.sin(k)]) for k in range(6)]
    b = LatencyBuffer(0.25, 1.0, 0.125)
    for k, v in enumerate(vals):
        b.record(k * 0.25, v)
    for now_k in range(3, 6):
        out = delayed_observation(b, now_k * 0.25)
        assert np.array_equal(out, 0.5 * vals[now_k - 1] + 0.5 * vals[now_k])
    b.latency = 0.5
    assert np.array_equal(delayed_observation(b, 1.25), vals[3])


@given(st.floats(0.0, 0.05), st.integers(0, 10_000))
def test_latency_piecewise_linear(lat, seed):
    rng = np.random.default_rng(seed)
    vals = [rng.normal(size=3) for _ in range(6)]
    b = _buffer(lat, values=vals)
    now = 5 * 0.025
    out = delayed_observation(b, now)
    target = now - lat
    i = min(int(math.floor(target / 0.025 + 1e-9)), 4)
    w = (target - i * 0.025) / 0.025
    expected = (1 - w) * vals[i] + w * vals[min(i + 1, 5)]
    assert np.allclose(out, expected, atol=1e-9)


@given(st.floats(0.0, 0.05))
def test_latency_constant_history_is_identity(lat):
    b = LatencyBuffer(0.025, 0.05, lat)
    c = np.array([0.3, -1.2, 7.0])
    b.prefill(1.0, c)
    assert np.allclose(delayed_observation(b, 1.0), c, rtol=0, atol=1e-15)


def test_latency_cold_buffer_falls_back():
    b = LatencyBuffer(0.025, 0.05, 0.05)
    b.record(0.0, np.array([1.0]))
    assert np.array_equal(delayed_observation(b, 0.0), [1.0])
    assert b.cold_reads == 1
    with pytest.raises(ValueError):
        b.record(0.0, np.array([2.0]))


def test_action_filter():
    f = make_action_filter(2, 10.0, 40.0)
    for _ in range(200):
        y = filter_action(f, np.array([0.05, -0.02]))
    assert np.allclose(y, [0.05, -0.02], atol=1e-12)
    f = make_action_filter(1, 10.0, 40.0)
    out = [filter_action(f, np.array([0.1 * (-1) ** k]))[0] for k in range(400)]
    assert max(abs(v) for v in out[200:]) < 0.1 * 0.1
    d = np.array([0.01, 0.02])
    assert np.array_equal(filter_action(None, d), d)


def _minus3db_frequency():
    """Bisect the measured amplitude response for the 1/sqrt(2) crossing."""
    def ratio(freq, fs=40.0, n=3000):
        f = make_action_filter(1, 10.0, fs)
        t = np.arange(n) / fs
        x = np.sin(2 * np.pi * freq * t + 0.3)
        y = np.array([filter_action(f, np.array([v]))[0] for v in x])
        # least-squares fit of the steady-state sinusoid
        A = np.stack([np.sin(2 * np.pi * freq * t), np.cos(2 * np.pi * freq * t)], 1)[n // 2:]
        cx, *_ = np.linalg.lstsq(A, x[n // 2:], rcond=None)
        cy, *_ = np.linalg.lstsq(A, y[n // 2:], rcond=None)
        return np.linalg.norm(cy) / np.linalg.norm(cx)
    lo, hi = 5.0, 15.0
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if ratio(mid) > 1 / math.sqrt(2):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_filter_minus_3db_point():
    assert abs(_minus3db_frequency() - 10.0) < 0.5


def test_transfer_disabled_flags():
    t = TransferConfig.disabled()
    assert not t.any_enabled
    assert TransferConfig().any_enabled
    assert TransferConfig().action_filter is False
