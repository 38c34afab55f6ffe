import math

import numpy as np
import pytest
from scipy.integrate import simpson

from pbsslib.core.__base__ import LinkSpec, SamplingGrid, SymbolFrame
from pbsslib.core.perturbation import KernelSettings, ChannelSet, compute_kernel, phase_noise, additive_nlin, \
    predict_received, block_metrics, metric_am, metric_lsas, save_kernel, load_kernel, cached_kernel, \
    kernel_fingerprint
from pbsslib.core.fiber import SsfmConfig, propagate_link
from pbsslib.core.receiver import coherent_front_end, fit_scale
from pbsslib.core.signal import QamConstellation, centered_taps, rrc_pulse, shape_waveform
from pbsslib.exceptions import KernelGridException, KernelWindowException, BlockLayoutException

POWER = 1e-3


def brute_force_theta(symbols: np.ndarray, kernel) -> np.ndarray:
    n = len(symbols)
    theta = np.zeros(n)
    for m in range(-kernel.phase_window, kernel.phase_window + 1):
        theta += np.abs(np.roll(symbols, -m)) ** 2 * kernel.h(m, 0).real
    return kernel.gamma * theta


def brute_force_delta(symbols: np.ndarray, kernel) -> np.ndarray:
    delta = np.zeros(len(symbols), dtype=np.complex128)
    for m in range(-kernel.window_m, kernel.window_m + 1):
        for k in range(-kernel.window_k, kernel.window_k + 1):
            if m == 0 or k == 0:
                continue
            delta += np.roll(symbols, -m) * np.conj(np.roll(symbols, -(m + k))) * np.roll(symbols, -k) * \
                kernel.h(m, k)
    return 1j * kernel.gamma * delta


@pytest.fixture(scope='module')
def lossless_kernel():
    link = LinkSpec(n_spans=1, span_length=10.0, alpha=0.0, beta2=0.0, gamma=1.0)
    pulse = rrc_pulse(0.1, SamplingGrid(symbol_rate=32e9, oversampling=8, n_symbols=64), span_symbols=16)
    settings = KernelSettings(window_m=20, window_k=20, phase_window=20, max_mk_product=400, z_step_km=5.0,
                              oversampling=8, time_symbols=64)
    return compute_kernel(link, pulse, settings=settings), pulse


def test_kernel_symmetries(small_kernel):
    table = small_kernel.table
    scale = np.max(np.abs(table))
    assert np.max(np.abs(table - table.T)) <= 1e-9 * scale
    assert np.max(np.abs(table - table[::-1, ::-1])) <= 1e-9 * scale
    for m in range(-small_kernel.phase_window, small_kernel.phase_window + 1):
        assert small_kernel.h(m, 0) == pytest.approx(small_kernel.h(-m, 0), rel=1e-12)
        assert small_kernel.h(m, 0).imag == 0.0
    assert small_kernel.h(0, 0).real > 0


def test_kernel_outside_window_is_zero(small_kernel):
    assert small_kernel.h(small_kernel.window_m + 1, 1) == 0j
    assert small_kernel.h(0, small_kernel.phase_window + 1) == 0j


def test_lossless_dispersionless_kernel(lossless_kernel):
    kernel, pulse = lossless_kernel
    expected = 10.0 * np.sum(pulse ** 4) / 8
    assert kernel.h(0, 0).real == pytest.approx(expected, rel=1e-9)
    scale = abs(kernel.h(0, 0))
    # Pulses 17 symbols apart no longer overlap
    for m, k in [(17, 0), (0, 17), (17, 3), (-18, -1), (2, 19)]:
        assert abs(kernel.h(m, k)) <= 1e-12 * scale


def test_kernel_product_cap(small_link):
    grid = SamplingGrid(symbol_rate=32e9, oversampling=8, n_symbols=64)
    settings = KernelSettings(window_m=8, window_k=8, phase_window=8, max_mk_product=64, z_step_km=2.0,
                              oversampling=8)
    kernel = compute_kernel(small_link, rrc_pulse(0.1, grid, 16), window=(8, 8, 16), settings=settings)
    mm, kk = np.meshgrid(np.arange(-8, 9), np.arange(-8, 9), indexing='ij')
    assert np.all(kernel.table[np.abs(mm * kk) > 16] == 0)
    assert np.any(kernel.table[(np.abs(mm * kk) <= 16) & (mm != 0) & (kk != 0)] != 0)


def test_kernel_grid_too_short(small_link):
    grid = SamplingGrid(symbol_rate=32e9, oversampling=8, n_symbols=64)
    settings = KernelSettings(window_m=8, window_k=8, phase_window=16, oversampling=8, time_symbols=16)
    with pytest.raises(KernelGridException):
        compute_kernel(small_link, rrc_pulse(0.1, grid, 16), settings=settings)


def test_kernel_settings_validation():
    with pytest.raises(KernelWindowException):
        KernelSettings(window_m=0)
    with pytest.raises(KernelGridException):
        KernelSettings(time_symbols=100)


def test_only_intra_channel_sets_are_supported():
    ChannelSet(transmit_channel=1, channels=(1,), offsets=(0.0,))
    with pytest.raises(KernelWindowException):
        ChannelSet(transmit_channel=1, channels=(0, 1, 2), offsets=(-50e9, 0.0, 50e9), intra_channel_only=False)


def test_phase_noise_matches_direct_sum(small_kernel, qam_symbols):
    symbols = qam_symbols(64) * math.sqrt(POWER)
    np.testing.assert_allclose(phase_noise(symbols, small_kernel), brute_force_theta(symbols, small_kernel),
                               rtol=1e-10, atol=1e-15)


def test_additive_nlin_matches_direct_sum(small_kernel, qam_symbols):
    symbols = qam_symbols(64) * math.sqrt(POWER)
    expected = brute_force_delta(symbols, small_kernel)
    actual = additive_nlin(symbols, small_kernel)
    assert np.max(np.abs(actual - expected)) <= 1e-10 * np.max(np.abs(expected))


def test_additive_nlin_is_cubic(small_kernel, qam_symbols):
    symbols = qam_symbols(512)
    delta = additive_nlin(symbols, small_kernel)
    doubled = additive_nlin(2 * symbols, small_kernel)
    assert np.max(np.abs(doubled - 8 * delta)) <= 1e-10 * np.max(np.abs(8 * delta))


def test_batched_frames_match_single_frames(small_kernel, qam_symbols):
    frames = np.stack([qam_symbols(256), qam_symbols(256)]) * math.sqrt(POWER)
    batched = predict_received(frames, small_kernel, 64)
    single = predict_received(frames[1], small_kernel, 64)
    np.testing.assert_allclose(batched.r_hat[1], single.r_hat, rtol=0, atol=1e-14)


@pytest.mark.parametrize('scope', ['block', 'frame'])
def test_mean_phase_removal(small_kernel, qam_symbols, scope):
    symbols = qam_symbols(1024) * math.sqrt(POWER)
    estimate = predict_received(symbols, small_kernel, 256, scope=scope)
    assert estimate.mean_theta.shape == (4,)
    centered = estimate.theta.reshape(4, 256) - estimate.mean_theta[:, None]
    if scope == 'block':
        assert np.max(np.abs(centered.mean(axis=1))) <= 1e-12
    else:
        assert np.ptp(estimate.mean_theta) == 0
        assert abs(centered.mean()) <= 1e-12


def test_constant_envelope_has_no_phase_distortion(small_kernel):
    symbols = np.exp(1j * np.pi / 4 * (2 * np.arange(256) % 8 + 1)) * math.sqrt(POWER)
    estimate = predict_received(symbols, small_kernel, 64, include_additive=False)
    assert np.ptp(estimate.theta) <= 1e-12 * np.max(estimate.theta)
    np.testing.assert_allclose(estimate.r_hat, symbols, rtol=0, atol=1e-12 * math.sqrt(POWER))


def test_zero_gamma_predicts_no_distortion(small_kernel, qam_symbols):
    symbols = qam_symbols(256)
    estimate = predict_received(symbols, small_kernel.with_gamma(0.0), 64)
    assert np.array_equal(estimate.r_hat, symbols)


def test_phase_only_kernel_has_no_additive_term(small_kernel, qam_symbols):
    symbols = qam_symbols(256)
    assert np.max(np.abs(additive_nlin(symbols, small_kernel.phase_only()))) == 0.0
    np.testing.assert_array_equal(phase_noise(symbols, small_kernel.phase_only()), phase_noise(symbols, small_kernel))


def test_metrics_agree_with_block_metrics(small_kernel, qam_symbols):
    frame = SymbolFrame(qam_symbols(256), block_length=64)
    kernel = small_kernel.with_gamma(small_kernel.gamma * POWER)
    estimate = predict_received(frame, kernel, 64)
    table = block_metrics(frame, estimate)
    assert table.shape == (4,)
    for index in range(4):
        assert metric_am(frame, estimate, index) == pytest.approx(table[index], rel=1e-12)
    phase_only = block_metrics(frame, predict_received(frame, kernel, 64, include_additive=False))
    energy = np.abs(frame.blocks) ** 2
    rotation = np.abs(np.exp(1j * (phase_noise(frame, kernel).reshape(4, 64)
                                   - phase_noise(frame, kernel).reshape(4, 64).mean(axis=1, keepdims=True))) - 1) ** 2
    np.testing.assert_allclose(phase_only, np.sum(energy * rotation, axis=1), rtol=1e-10)
    assert metric_lsas(frame, kernel, 64, 2) == pytest.approx(phase_only[2], rel=1e-12)


def test_block_layout_errors(small_kernel, qam_symbols):
    symbols = qam_symbols(256)
    with pytest.raises(BlockLayoutException):
        predict_received(symbols, small_kernel, 100)
    with pytest.raises(BlockLayoutException):
        predict_received(symbols, small_kernel, 64, scope='window')
    estimate = predict_received(symbols, small_kernel, 64)
    with pytest.raises(BlockLayoutException):
        metric_am(symbols, estimate, 4)


def test_save_and_load_kernel(tmp_path, small_kernel):
    path = str(tmp_path / 'kernel.npz')
    save_kernel(small_kernel, path)
    loaded = load_kernel(path, expected_fingerprint=small_kernel.fingerprint)
    assert np.array_equal(loaded.table, small_kernel.table)
    assert np.array_equal(loaded.phase_axis, small_kernel.phase_axis)
    assert loaded.gamma == small_kernel.gamma
    assert loaded.settings == small_kernel.settings
    with pytest.raises(KernelWindowException):
        load_kernel(path, expected_fingerprint='0' * 56)


def test_cached_kernel_is_computed_once(tmp_path, small_link):
    pulse = rrc_pulse(0.1, SamplingGrid(symbol_rate=32e9, oversampling=8, n_symbols=64), 16)
    settings = KernelSettings(window_m=4, window_k=4, phase_window=8, max_mk_product=16, z_step_km=2.0,
                              oversampling=8)
    first, first_hit = cached_kernel(small_link, pulse, settings, str(tmp_path))
    second, second_hit = cached_kernel(small_link, pulse, settings, str(tmp_path))
    assert (first_hit, second_hit) == (False, True)
    assert first.fingerprint == second.fingerprint == kernel_fingerprint(small_link, pulse, settings)
    assert np.array_equal(first.table, second.table)


def test_fingerprint_tracks_link_and_settings(small_link):
    pulse = rrc_pulse(0.1, SamplingGrid(symbol_rate=32e9, oversampling=8, n_symbols=64), 16)
    settings = KernelSettings(oversampling=8)
    reference = kernel_fingerprint(small_link, pulse, settings)
    assert kernel_fingerprint(small_link, pulse, settings) == reference
    assert kernel_fingerprint(small_link.replace(gamma=1.3), pulse, settings) != reference
    assert kernel_fingerprint(small_link, pulse, KernelSettings(oversampling=8, window_k=32)) != reference


def test_metric_am_ignores_global_phase(small_kernel, qam_symbols):
    frame = SymbolFrame(qam_symbols(256), block_length=64)
    rotated = SymbolFrame(frame.symbols * np.exp(0.7j), block_length=64)
    kernel = small_kernel.with_gamma(small_kernel.gamma * POWER)
    estimate = predict_received(frame, kernel, 64)
    rotated_estimate = predict_received(rotated, kernel, 64)
    for index in range(4):
        assert metric_am(rotated, rotated_estimate, index) == pytest.approx(metric_am(frame, estimate, index),
                                                                             rel=1e-10)


def test_dispersive_self_term_matches_direct_integral():
    link = LinkSpec.from_engineering(n_spans=1, span_length=20.0)
    oversampling = 8
    pulse = rrc_pulse(0.1, SamplingGrid(symbol_rate=32e9, oversampling=oversampling, n_symbols=64), span_symbols=16)
    settings = KernelSettings(window_m=4, window_k=4, phase_window=8, max_mk_product=16, z_step_km=0.5,
                              oversampling=oversampling)
    kernel = compute_kernel(link, pulse, settings=settings)

    n_samples = 512 * oversampling
    z = np.linspace(0.0, link.span_length, 401)
    frequencies = np.fft.fftfreq(n_samples, d=1.0 / (32e9 * oversampling))
    spectrum = np.fft.fft(centered_taps(pulse, n_samples).astype(np.complex128))
    transfer = np.exp(1j * link.beta2 * 1e-24 / 2 * np.outer(z, (2 * np.pi * frequencies) ** 2))
    p = np.fft.ifft(spectrum * transfer, axis=-1)
    integrand = np.exp(-link.alpha * z) * np.sum(np.abs(p) ** 4, axis=-1) / oversampling
    assert kernel.h(0, 0).real == pytest.approx(simpson(integrand, x=z), rel=1e-3)


def correlation(a: np.ndarray, b: np.ndarray) -> float:
    return float(abs(np.vdot(a, b)) / math.sqrt(np.vdot(a, a).real * np.vdot(b, b).real))


@pytest.fixture(scope='module')
def single_span():
    grid = SamplingGrid(symbol_rate=32e9, oversampling=4, n_symbols=2048)
    link = LinkSpec.from_engineering(n_spans=1, span_length=80.0)
    pulse = rrc_pulse(0.1, grid, span_symbols=32)
    settings = KernelSettings(window_m=32, window_k=32, phase_window=48, max_mk_product=1024, z_step_km=0.5,
                              oversampling=4)
    kernel = compute_kernel(link, pulse, settings=settings)
    points, _ = QamConstellation(order=16).points()
    symbols = np.random.Generator(np.random.PCG64(17)).choice(points, size=grid.n_symbols)
    waveform = shape_waveform(symbols, pulse, grid)
    cfg = SsfmConfig(step_km=0.05, noiseless=True)
    dispersive_only = LinkSpec.from_engineering(n_spans=1, span_length=80.0, gamma=0.0)
    linear = coherent_front_end(propagate_link(waveform, dispersive_only, cfg), link, pulse)
    return link, pulse, kernel, symbols, waveform, cfg, linear


@pytest.mark.parametrize('power_dbm', [-3.0, 0.0, 3.0])
def test_predicted_perturbation_tracks_split_step(single_span, power_dbm):
    link, pulse, kernel, symbols, waveform, cfg, linear = single_span
    amplitude = math.sqrt(1e-3 * 10 ** (power_dbm / 10))
    received = coherent_front_end(propagate_link(waveform.scaled(amplitude), link, cfg), link, pulse) / amplitude
    measured = received / fit_scale(linear, received) - linear
    r_hat = predict_received(symbols * amplitude, kernel, len(symbols), scope='frame').r_hat / amplitude
    predicted = r_hat / fit_scale(symbols, r_hat) - symbols
    assert correlation(measured, predicted) >= 0.85
