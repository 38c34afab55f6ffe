"""
Receiver chain and figures of merit: CD compensation with matched filtering, pilot-aided carrier phase recovery,
effective SNR and the achievable information rate under a Gaussian mismatched decoding metric.
"""
import logging
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.interpolate import interp1d
from scipy.ndimage import uniform_filter1d
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp
from scipy.stats import norm

from .__base__ import LinkSpec, SymbolFrame, WaveformBuffer
from .signal import cd_filter, matched_filter_downsample
from ..common.formating import linear_to_db
from ..exceptions import InsufficientPilotsException, ZeroEnergyException, DegenerateVarianceException

log = logging.getLogger(__name__)

INTERPOLATIONS: tuple[str, ...] = ('linear',)


@dataclass(frozen=True)
class CprConfig:
    """
    Pilot-aided CPR settings: one pilot every pilot_spacing symbols, phase smoothed over pilot_smoothing pilots
    """
    pilot_spacing: int = 100
    pilot_smoothing: int = 5
    interpolation: str = 'linear'
    pilot_seed: int = 0

    def __post_init__(self):
        if self.pilot_spacing < 2:
            raise InsufficientPilotsException(f'Pilot spacing must be at least 2, got {self.pilot_spacing}')
        if self.pilot_smoothing < 1 or self.pilot_smoothing % 2 == 0:
            raise InsufficientPilotsException(f'Pilot smoothing must be odd and positive, got {self.pilot_smoothing}')
        if self.interpolation not in INTERPOLATIONS:
            raise InsufficientPilotsException(f'Unknown pilot interpolation "{self.interpolation}"')


@dataclass
class MetricReport:
    effective_snr: float
    air_gross: float
    air_net: float
    launch_power: float = float('nan')
    residual_variance: float = float('nan')
    snr_at_ceiling: bool = False


def coherent_front_end(w: WaveformBuffer, link: LinkSpec, pulse: np.ndarray) -> np.ndarray:
    """
    Compensates the accumulated dispersion of the whole link, then matched-filters and samples at the symbol rate
    :param w: Demultiplexed channel waveform
    :param link: Link the waveform went through
    :param pulse: Transmit pulse sampled at w.grid.sample_rate
    :return: ndarray of received symbols
    """
    compensated = cd_filter(w, link.beta2, link.total_length, sign=-1)
    return matched_filter_downsample(compensated, pulse)


def pilot_positions(n_symbols: int, pilot_spacing: int) -> np.ndarray:
    return np.arange(0, n_symbols, pilot_spacing, dtype=np.int64)


def pilot_symbols(n_pilots: int, seed: int) -> np.ndarray:
    """
    Returns unit-energy QPSK pilots (+-1 +-j) / sqrt(2) drawn from a seeded stream
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    bits = rng.integers(0, 2, size=(2, n_pilots))
    return ((2.0 * bits[0] - 1.0) + 1j * (2.0 * bits[1] - 1.0)) / math.sqrt(2)


def insert_pilots(frame: SymbolFrame, cfg: CprConfig) -> SymbolFrame:
    """
    Overwrites the symbols at positions n = 0 mod pilot_spacing with known pilots. The overwritten payload is excluded
    from the statistics through SymbolFrame.data_mask, the pilot values are kept in provenance['pilots'].
    :param frame: Selected payload frame
    :param cfg: CPR settings
    :return: New SymbolFrame carrying pilots
    """
    positions = pilot_positions(len(frame), cfg.pilot_spacing)
    pilots = pilot_symbols(len(positions), cfg.pilot_seed)
    symbols = frame.symbols.copy()
    symbols[positions] = pilots
    provenance = dict(frame.provenance)
    provenance['pilots'] = pilots
    return SymbolFrame(symbols=symbols, block_length=frame.block_length, pilot_positions=positions,
                       provenance=provenance)


def _smooth(phases: np.ndarray, size: int) -> np.ndarray:
    if size == 1 or len(phases) < 2:
        return phases
    return uniform_filter1d(phases, size=size, mode='nearest')


def estimate_phase(y: SymbolFrame, x_pilots: np.ndarray, cfg: CprConfig) -> np.ndarray:
    """
    Estimates the carrier phase at every symbol from the pilots
    :param y: Received frame with its pilot positions set
    :param x_pilots: Transmitted pilot values
    :param cfg: CPR settings
    :return: ndarray of phases in rad, one per symbol
    """
    positions = y.pilot_positions
    if len(positions) < 2 or len(x_pilots) != len(positions):
        raise InsufficientPilotsException(
            f'Pilot-aided CPR needs at least 2 known pilots, got {len(positions)} positions and {len(x_pilots)} values'
        )
    raw = np.unwrap(np.angle(y.symbols[positions] * np.conj(x_pilots)))
    smoothed = _smooth(raw, cfg.pilot_smoothing)
    interpolator = interp1d(positions, smoothed, kind=cfg.interpolation, fill_value='extrapolate', assume_sorted=True)
    return interpolator(np.arange(len(y)))


def pilot_cpr(y: SymbolFrame, x_pilots: np.ndarray, cfg: CprConfig) -> SymbolFrame:
    """
    Removes the pilot-estimated phase trajectory, y(n) exp(-j phi(n))
    :param y: Received frame with its pilot positions set
    :param x_pilots: Transmitted pilot values
    :param cfg: CPR settings
    :return: Phase corrected SymbolFrame
    """
    phase = estimate_phase(y, x_pilots, cfg)
    return y.with_symbols(y.symbols * np.exp(-1j * phase))


def _arrays(x: Union[SymbolFrame, np.ndarray], y: Union[SymbolFrame, np.ndarray],
            mask: Union[np.ndarray, None]) -> tuple[np.ndarray, np.ndarray]:
    if mask is None and isinstance(x, SymbolFrame):
        mask = x.data_mask
    x = x.symbols if isinstance(x, SymbolFrame) else np.asarray(x, dtype=np.complex128)
    y = y.symbols if isinstance(y, SymbolFrame) else np.asarray(y, dtype=np.complex128)
    if mask is not None:
        x, y = x[mask], y[mask]
    return x, y


def fit_scale(x: Union[SymbolFrame, np.ndarray], y: Union[SymbolFrame, np.ndarray],
              mask: Union[np.ndarray, None] = None) -> complex:
    """
    Least-squares complex gain a = sum(x* y) / sum(|x|^2)
    """
    x, y = _arrays(x, y, mask)
    energy: float = float(np.vdot(x, x).real)
    if energy == 0:
        raise ZeroEnergyException('Reference symbols carry no energy')
    return complex(np.vdot(x, y) / energy)


def effective_snr(x: Union[SymbolFrame, np.ndarray], y: Union[SymbolFrame, np.ndarray],
                  mask: Union[np.ndarray, None] = None, ceiling_db: float = 100.0) -> tuple[float, bool]:
    """
    SNR after fitting a complex gain, |a|^2 E[|x|^2] / E[|y - a x|^2]. Pilots of a SymbolFrame are left out.
    :param x: Transmitted symbols
    :param y: Received symbols
    :param mask: Symbols to keep, defaults to the data mask of x
    :param ceiling_db: Value returned for noiseless or better links
    :return: (SNR in dB, True when clipped at the ceiling)
    """
    x, y = _arrays(x, y, mask)
    gain: complex = fit_scale(x, y)
    noise: float = float(np.mean(np.abs(y - gain * x) ** 2))
    signal: float = abs(gain) ** 2 * float(np.mean(np.abs(x) ** 2))
    if noise == 0 or signal / noise > 10 ** (ceiling_db / 10):
        return ceiling_db, True
    return float(linear_to_db(signal / noise)), False


def _air_at(x: np.ndarray, y: np.ndarray, points: np.ndarray, log_prior: np.ndarray, variance: float,
            chunk: int) -> float:
    total: float = 0.0
    for start in range(0, len(y), chunk):
        y_chunk, x_chunk = y[start:start + chunk], x[start:start + chunk]
        exponents = log_prior[None, :] - np.abs(y_chunk[:, None] - points[None, :]) ** 2 / variance
        total += float(np.sum(-np.abs(y_chunk - x_chunk) ** 2 / variance - logsumexp(exponents, axis=1)))
    return total / (len(y) * math.log(2))


def air_mismatched(x: Union[SymbolFrame, np.ndarray], y: Union[SymbolFrame, np.ndarray],
                   input_distribution: tuple[np.ndarray, np.ndarray], rate_loss: float = 0.0,
                   launch_power: float = float('nan'), optimize_variance: bool = False,
                   mask: Union[np.ndarray, None] = None, chunk: int = 2048,
                   ceiling_db: float = 100.0) -> MetricReport:
    """
    AIR with a circular Gaussian auxiliary channel q(y|x) of variance E[|y - x|^2],
    (1/n) sum log2 q(y|x) / sum_x' P(x') q(y|x'), minus the selection rate loss
    :param x: Transmitted symbols
    :param y: Received symbols, phase corrected and scale normalized
    :param input_distribution: (points, probabilities) of the transmit constellation
    :param rate_loss: Selection rate loss in bits/2D
    :param launch_power: Launch power in dBm, copied to the report
    :param optimize_variance: Maximize the AIR over the auxiliary variance instead of using the residual variance
    :param mask: Symbols to keep, defaults to the data mask of x
    :param chunk: Received symbols processed at once
    :param ceiling_db: SNR reported for noiseless links
    :return: MetricReport
    """
    snr, at_ceiling = effective_snr(x, y, mask=mask, ceiling_db=ceiling_db)
    x, y = _arrays(x, y, mask)
    points, probabilities = input_distribution
    variance: float = float(np.mean(np.abs(y - x) ** 2))
    if not variance > 0:
        raise DegenerateVarianceException(f'Residual variance must be positive, got {variance}')
    with np.errstate(divide='ignore'):
        log_prior = np.log(np.asarray(probabilities, dtype=float))
    points = np.asarray(points, dtype=np.complex128)

    air: float = _air_at(x, y, points, log_prior, variance, chunk)
    if optimize_variance:
        result = minimize_scalar(lambda log_var: -_air_at(x, y, points, log_prior, math.exp(log_var), chunk),
                                 bounds=(math.log(variance) - math.log(10), math.log(variance) + math.log(10)),
                                 method='bounded', options={'xatol': 1e-4})
        if -result.fun > air:
            air, variance = float(-result.fun), math.exp(result.x)
    log.debug('AIR %.4f bits/2D at residual variance %.4g', air, variance)
    return MetricReport(effective_snr=snr, air_gross=air, air_net=air - rate_loss, launch_power=launch_power,
                        residual_variance=variance, snr_at_ceiling=at_ceiling)


def confidence_interval(values: Union[list, np.ndarray], level: float = 0.95) -> tuple[float, float]:
    """
    Mean and half width of the normal-approximation confidence interval
    :param values: Samples
    :param level: Confidence level
    :return: (mean, half width), the half width is 0 for fewer than two samples
    """
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        return float('nan'), float('nan')
    if len(values) < 2:
        return float(values[0]), 0.0
    half_width: float = float(norm.ppf(0.5 + level / 2.0) * np.std(values, ddof=1) / math.sqrt(len(values)))
    return float(np.mean(values)), half_width
