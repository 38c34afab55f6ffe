"""
Fast model-identity, physics and estimator checks run by `pbsslib selftest`, independent of pytest.
"""
import logging
import math
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .__base__ import LinkSpec, SamplingGrid, WaveformBuffer, SymbolFrame
from .fiber import SsfmConfig, propagate_link
from .perturbation import KernelSettings, compute_kernel, additive_nlin, predict_received
from .prediction import measure_pnlin, eta_of
from .receiver import effective_snr, air_mismatched, coherent_front_end, fit_scale
from .shaping import SelectionConfig, solve_mb, select_frame
from .signal import QamConstellation, rrc_pulse, shape_waveform, cd_filter
from ..common.formating import dbm_to_watt

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise AssertionError(message)


def _small_link(gamma: float = 1.37) -> LinkSpec:
    return LinkSpec.from_engineering(n_spans=2, span_length=20.0, gamma=gamma)


@lru_cache(maxsize=1)
def _small_kernel():
    grid = SamplingGrid(symbol_rate=32e9, oversampling=8, n_symbols=128)
    settings = KernelSettings(window_m=8, window_k=8, phase_window=16, max_mk_product=64, z_step_km=1.0,
                              oversampling=8, symbol_rate=32e9)
    return compute_kernel(_small_link(), rrc_pulse(0.1, grid, span_symbols=16), settings=settings)


def _qam_frame(n_symbols: int, seed: int, order: int = 256) -> np.ndarray:
    points, _ = QamConstellation(order=order).points()
    return np.random.Generator(np.random.PCG64(seed)).choice(points, size=n_symbols)


def check_kernel_symmetry() -> str:
    kernel = _small_kernel()
    table = kernel.table
    scale: float = float(np.max(np.abs(table)))
    square = table[kernel.window_m - 8:kernel.window_m + 9, kernel.window_k - 8:kernel.window_k + 9]
    swap: float = float(np.max(np.abs(square - square.T))) / scale
    mirror: float = float(np.max(np.abs(table - table[::-1, ::-1]))) / scale
    imaginary: float = float(np.max(np.abs(kernel.phase_axis.imag))) if np.iscomplexobj(kernel.phase_axis) else 0.0
    _expect(swap <= 1e-9, f'h(m,k) != h(k,m), relative error {swap:.3g}')
    _expect(mirror <= 1e-9, f'h(-m,-k) != h(m,k), relative error {mirror:.3g}')
    _expect(imaginary <= 1e-6 * scale, f'h(m,0) is not real, imaginary part {imaginary:.3g}')
    return f'symmetry {swap:.2g}, mirror {mirror:.2g}'


def check_cubic_scaling() -> str:
    kernel = _small_kernel()
    symbols = _qam_frame(1024, 1)
    delta, doubled = additive_nlin(symbols, kernel), additive_nlin(2 * symbols, kernel)
    error: float = float(np.max(np.abs(doubled - 8 * delta)) / np.max(np.abs(8 * delta)))
    _expect(error <= 1e-10, f'additive NLIN is not cubic, relative error {error:.3g}')
    return f'relative error {error:.2g}'


def check_eta_power_independence() -> str:
    kernel = _small_kernel()
    frame = SymbolFrame(_qam_frame(1024, 2), block_length=256)
    etas: list = []
    for power_dbm in (0.0, 3.0):
        p_nlin: float = dbm_to_watt(measure_pnlin(frame, kernel, 256, power_dbm))
        etas.append(eta_of(p_nlin, dbm_to_watt(power_dbm)))
    error: float = abs(etas[1] - etas[0]) / etas[0]
    _expect(error <= 1e-10, f'eta depends on power, relative change {error:.3g}')
    return f'eta {etas[0]:.6g} 1/W^2, relative change {error:.2g}'


def check_mean_phase_removal() -> str:
    kernel = _small_kernel()
    symbols = _qam_frame(1024, 3) * math.sqrt(dbm_to_watt(4.0))
    estimate = predict_received(symbols, kernel, 256)
    centered = estimate.theta.reshape(-1, 256) - estimate.mean_theta[:, None]
    worst: float = float(np.max(np.abs(centered.mean(axis=1))))
    _expect(worst <= 1e-12, f'block phase mean after removal is {worst:.3g}')
    return f'largest block mean {worst:.2g} rad'


def check_determinism() -> str:
    kernel = _small_kernel()
    mb = solve_mb(2.5, QamConstellation(order=256).amplitude_levels)
    cfg = SelectionConfig(L=64, K=256, N=4, interleaver_seed=7, metric='AM')
    first = select_frame(mb, cfg, 1024, 11, kernel)
    second = select_frame(mb, cfg, 1024, 11, kernel)
    _expect(np.array_equal(first.symbols, second.symbols), 'selected frames differ between identical runs')
    _expect(np.array_equal(first.provenance['chosen'], second.provenance['chosen']), 'chosen indices differ')
    return 'bit-identical'


def check_transparent_link() -> str:
    grid = SamplingGrid(symbol_rate=32e9, oversampling=4, n_symbols=1024)
    link = _small_link(gamma=0.0)
    waveform = shape_waveform(_qam_frame(1024, 4, order=16), rrc_pulse(0.1, grid, 32), grid)
    received = propagate_link(waveform, link, SsfmConfig(step_km=1.0, noiseless=True))
    compensated = cd_filter(received, link.beta2, link.total_length, sign=-1)
    rms: float = float(np.sqrt(np.mean(np.abs(compensated.samples - waveform.samples) ** 2) / waveform.power()))
    _expect(rms <= 1e-9, f'linear link with CD compensation is not transparent, RMS error {rms:.3g}')
    return f'RMS error {rms:.2g}'


def check_spm_phase() -> str:
    grid = SamplingGrid(symbol_rate=32e9, oversampling=2, n_symbols=64)
    link = LinkSpec(n_spans=1, span_length=10.0, alpha=0.0, beta2=0.0, gamma=1.37)
    power: float = 0.01
    waveform = WaveformBuffer(samples=np.full(grid.n_samples, math.sqrt(power), dtype=np.complex128), grid=grid)
    received = propagate_link(waveform, link, SsfmConfig(step_km=0.5, noiseless=True))
    expected: float = link.gamma * power * link.span_length
    error: float = float(np.max(np.abs(np.angle(received.samples) - expected)))
    _expect(error <= 1e-9, f'SPM phase off by {error:.3g} rad')
    return f'phase {expected:.6f} rad, error {error:.2g}'


def _correlation(a: np.ndarray, b: np.ndarray) -> float:
    return float(abs(np.vdot(a, b)) / math.sqrt(np.vdot(a, a).real * np.vdot(b, b).real))


def check_perturbation_vs_ssfm() -> str:
    grid = SamplingGrid(symbol_rate=32e9, oversampling=4, n_symbols=1024)
    link = LinkSpec.from_engineering(n_spans=1, span_length=40.0)
    pulse = rrc_pulse(0.1, grid, span_symbols=32)
    settings = KernelSettings(window_m=24, window_k=24, phase_window=32, max_mk_product=576, z_step_km=0.5,
                              oversampling=4, symbol_rate=32e9)
    kernel = compute_kernel(link, pulse, settings=settings)
    symbols = _qam_frame(1024, 12, order=16)
    waveform = shape_waveform(symbols, pulse, grid)
    cfg = SsfmConfig(step_km=0.1, noiseless=True)
    linear = coherent_front_end(propagate_link(waveform, LinkSpec.from_engineering(n_spans=1, span_length=40.0,
                                                                                   gamma=0.0), cfg), link, pulse)
    correlations: list = []
    for power_dbm in (-3.0, 0.0, 3.0):
        amplitude: float = math.sqrt(dbm_to_watt(power_dbm))
        received = coherent_front_end(propagate_link(waveform.scaled(amplitude), link, cfg), link, pulse) / amplitude
        measured = received / fit_scale(linear, received) - linear
        r_hat = predict_received(symbols * amplitude, kernel, 1024, scope='frame').r_hat / amplitude
        predicted = r_hat / fit_scale(symbols, r_hat) - symbols
        correlations.append(_correlation(measured, predicted))
    _expect(min(correlations) >= 0.85, f'predicted and simulated perturbations correlate at {min(correlations):.3f}')
    return ', '.join(f'{value:.3f}' for value in correlations)


def check_snr_estimator() -> str:
    rng = np.random.Generator(np.random.PCG64(5))
    x = _qam_frame(2 ** 16, 6)
    noise = (rng.standard_normal(len(x)) + 1j * rng.standard_normal(len(x))) * math.sqrt(0.01 / 2)
    snr, _ = effective_snr(x, x + noise)
    _expect(abs(snr - 20.0) <= 0.1, f'effective SNR {snr:.3f} dB on a 20 dB channel')
    return f'{snr:.3f} dB'


def check_air_estimator() -> str:
    rng = np.random.Generator(np.random.PCG64(8))
    constellation = QamConstellation(order=256)
    x = _qam_frame(2 ** 14, 9)
    noise = (rng.standard_normal(len(x)) + 1j * rng.standard_normal(len(x))) * math.sqrt(1e-4 / 2)
    report = air_mismatched(x, x + noise, constellation.points(), 0.0)
    _expect(abs(report.air_gross - 8.0) <= 0.05, f'AIR {report.air_gross:.4f} bits/2D at 40 dB')
    return f'{report.air_gross:.4f} bits/2D'


def check_rate_loss() -> str:
    loss: float = SelectionConfig(L=256, K=4096, N=8).rate_loss
    _expect(math.isclose(loss, 3 / 256, rel_tol=0, abs_tol=1e-15), f'rate loss {loss}')
    return f'{loss:.5f} bits/2D'


CHECKS: dict[str, Callable[[], str]] = {
    'kernel symmetry': check_kernel_symmetry,
    'cubic scaling': check_cubic_scaling,
    'eta power independence': check_eta_power_independence,
    'mean phase removal': check_mean_phase_removal,
    'determinism': check_determinism,
    'transparent linear link': check_transparent_link,
    'SPM phase': check_spm_phase,
    'perturbation vs SSFM': check_perturbation_vs_ssfm,
    'SNR estimator': check_snr_estimator,
    'AIR estimator': check_air_estimator,
    'rate loss': check_rate_loss,
}


def run_selftest() -> list[CheckResult]:
    """
    Runs every check, a failure does not stop the others
    :return: list of CheckResult
    """
    results: list = []
    for name, check in CHECKS.items():
        started: float = time.perf_counter()
        try:
            detail: str = check()
            passed: bool = True
        except Exception as exc:
            detail, passed = f'{type(exc).__name__}: {exc}', False
        results.append(CheckResult(name=name, passed=passed, detail=detail, seconds=time.perf_counter() - started))
        log.info('%s %s (%s)', 'PASS' if passed else 'FAIL', name, detail)
    return results
