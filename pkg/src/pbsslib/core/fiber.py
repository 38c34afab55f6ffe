"""
Multi-span single-polarization split-step Fourier propagation with lumped EDFA amplification and ASE noise.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.constants as const
from tqdm import tqdm

from .__base__ import LinkSpec, WaveformBuffer
from ..common.formating import db_to_linear, linear_to_db
from ..common.utils import progress_enabled
from ..exceptions import InvalidLinkException, PropagationDivergedException

log = logging.getLogger(__name__)

SCHEMES: tuple[str, ...] = ('symmetric', 'asymmetric')


@dataclass(frozen=True)
class SsfmConfig:
    """
    Split-step settings: step size in km, symmetric or asymmetric splitting, ASE seed and a noiseless switch
    """
    step_km: float = 0.1
    scheme: str = 'symmetric'
    noise_seed: int = 0
    noiseless: bool = False

    def __post_init__(self):
        if not 0 < self.step_km <= 1.0:
            raise InvalidLinkException(f'SSFM step must lie in (0, 1] km, got {self.step_km}')
        if self.scheme not in SCHEMES:
            raise InvalidLinkException(f'Unknown SSFM scheme "{self.scheme}", expected one of {SCHEMES}')

    def n_steps(self, span_length: float) -> int:
        """
        Returns the number of steps per span, the step has to divide the span length
        :param span_length: Span length in km
        :return: int
        """
        steps: int = int(round(span_length / self.step_km))
        if steps < 1 or not math.isclose(steps * self.step_km, span_length, rel_tol=1e-9, abs_tol=1e-12):
            raise InvalidLinkException(f'Step {self.step_km} km does not divide the span length {span_length} km')
        return steps

    def replace(self, **changes) -> 'SsfmConfig':
        return dataclasses.replace(self, **changes)


def _nonlinear_length(alpha: float, step: float, at_midpoint: bool) -> float:
    """
    Exact loss-weighted length of one nonlinear step. The field the phase is applied to is taken at the step start,
    or at its midpoint for the symmetric scheme.
    """
    if alpha == 0:
        return step
    effective: float = -math.expm1(-alpha * step) / alpha
    return effective * math.exp(alpha * step / 2) if at_midpoint else effective


def propagate_span(w: WaveformBuffer, link: LinkSpec, cfg: SsfmConfig) -> WaveformBuffer:
    """
    Propagates a waveform through one fiber span (no amplifier). Linear steps apply dispersion and loss in the
    frequency domain, nonlinear steps apply exp(j gamma |A|^2 dz_eff) with the exact per-step loss integral.
    :param w: Input waveform, its grid must cover the whole WDM band
    :param link: Link parameters
    :param cfg: Split-step settings
    :return: WaveformBuffer at the span end
    """
    n_steps: int = cfg.n_steps(link.span_length)
    step: float = link.span_length / n_steps
    frequencies = w.grid.frequencies() + w.center_frequency_offset
    # Log-domain linear operator per km: dispersion phase and field loss
    linear = 1j * (link.beta2_s2 / 2.0) * (2 * np.pi * frequencies) ** 2 - link.alpha / 2.0
    symmetric: bool = cfg.scheme == 'symmetric'
    nonlinear_length: float = _nonlinear_length(link.alpha, step, at_midpoint=symmetric)
    full_step = np.exp(linear * step)

    field = w.samples.astype(np.complex128, copy=True)
    spectrum = np.fft.fft(field)
    if symmetric:
        half_step = np.exp(linear * step / 2.0)
        spectrum *= half_step
        for index in range(n_steps):
            field = np.fft.ifft(spectrum)
            if link.gamma != 0:
                field *= np.exp(1j * link.gamma * nonlinear_length * np.abs(field) ** 2)
            spectrum = np.fft.fft(field)
            spectrum *= full_step if index < n_steps - 1 else half_step
    else:
        for _ in range(n_steps):
            if link.gamma != 0:
                field = np.fft.ifft(spectrum)
                field *= np.exp(1j * link.gamma * nonlinear_length * np.abs(field) ** 2)
                spectrum = np.fft.fft(field)
            spectrum *= full_step
    field = np.fft.ifft(spectrum)

    if not np.all(np.isfinite(field)):
        raise PropagationDivergedException(
            f'Field diverged within a span (step {step} km, input power {w.power():.4g} W)'
        )
    return w.with_samples(field)


def ase_psd(link: LinkSpec) -> float:
    """
    Returns the single-polarization ASE power spectral density added by one amplifier,
    S = n_sp h f_c (G - 1) with n_sp = NF / 2 * G / (G - 1)
    :param link: Link parameters
    :return: PSD in W/Hz
    """
    gain: float = link.span_gain
    noise_figure: float = db_to_linear(link.edfa_noise_figure)
    # n_sp (G - 1) simplifies to NF G / 2, which stays finite for a lossless span
    return noise_figure / 2.0 * gain * const.h * link.center_frequency


def amplify_with_ase(w: WaveformBuffer, link: LinkSpec, rng_stream: Union[np.random.Generator, None]) -> WaveformBuffer:
    """
    Amplifies the field by the span gain and adds circular white Gaussian ASE of power ase_psd * sample_rate
    :param w: Waveform at the end of a span
    :param link: Link parameters
    :param rng_stream: Generator for the noise, None for a noiseless amplifier
    :return: Amplified WaveformBuffer
    """
    field = w.samples * math.sqrt(link.span_gain)
    if rng_stream is not None:
        noise_power: float = ase_psd(link) * w.grid.sample_rate
        n: int = len(field)
        noise = rng_stream.standard_normal(n) + 1j * rng_stream.standard_normal(n)
        field = field + noise * math.sqrt(noise_power / 2.0)
    return w.with_samples(field)


def noise_streams(noise_seed: int, n_spans: int) -> list[np.random.Generator]:
    """
    Returns one independent generator per amplifier, all derived from one seed
    :param noise_seed: 64 bit seed
    :param n_spans: Number of amplifiers
    :return: list of Generator
    """
    return [np.random.Generator(np.random.PCG64(seed)) for seed in np.random.SeedSequence(noise_seed).spawn(n_spans)]


def propagate_link(w: WaveformBuffer, link: LinkSpec, cfg: SsfmConfig) -> WaveformBuffer:
    """
    Propagates a waveform over every span of the link, amplifying after each span. Deterministic given the seed.
    :param w: Launched waveform
    :param link: Link parameters
    :param cfg: Split-step settings
    :return: Received WaveformBuffer
    """
    streams: list = noise_streams(cfg.noise_seed, link.n_spans)
    field: WaveformBuffer = w
    spans = range(link.n_spans)
    if progress_enabled():
        spans = tqdm(spans, desc='SSFM spans', unit='span', leave=False)
    for span in spans:
        field = propagate_span(field, link, cfg)
        field = amplify_with_ase(field, link, None if cfg.noiseless else streams[span])
        log.debug('Span %d/%d done, power %.4g W', span + 1, link.n_spans, field.power())
    return field


def linear_snr_budget(link: LinkSpec, launch_power: float, bandwidth: float) -> float:
    """
    Closed-form linear-regime SNR of the link: launch power over the ASE of every amplifier inside bandwidth
    :param link: Link parameters
    :param launch_power: Per-channel launch power in W
    :param bandwidth: Noise bandwidth in Hz, the symbol rate for a matched-filter receiver
    :return: SNR in dB
    """
    return linear_to_db(launch_power / (link.n_spans * ase_psd(link) * bandwidth))


def normalized_difference_db(reference: np.ndarray, candidate: np.ndarray) -> float:
    """
    Returns 10 log10(|candidate - reference|^2 / |reference|^2)
    """
    return linear_to_db(float(np.sum(np.abs(candidate - reference) ** 2) / np.sum(np.abs(reference) ** 2)))


def converge_step(w: WaveformBuffer, link: LinkSpec, cfg: SsfmConfig, threshold_db: float = -30.0,
                  max_halvings: int = 6) -> SsfmConfig:
    """
    Halves the step until a noiseless propagation changes by less than threshold_db from the previous step size
    :param w: Launched waveform, at the power of interest
    :param link: Link parameters
    :param cfg: Starting split-step settings
    :param threshold_db: Accepted normalized change
    :param max_halvings: Maximum number of halvings before giving up
    :return: SsfmConfig with the converged step
    """
    current: SsfmConfig = cfg.replace(noiseless=True)
    previous = propagate_link(w, link, current).samples
    for _ in range(max_halvings):
        finer: SsfmConfig = current.replace(step_km=current.step_km / 2.0)
        refined = propagate_link(w, link, finer).samples
        change: float = normalized_difference_db(refined, previous)
        log.info('Step %.4g km -> %.4g km changes the output by %.1f dB', current.step_km, finer.step_km, change)
        if change < threshold_db:
            return cfg.replace(step_km=current.step_km)
        current, previous = finer, refined
    raise InvalidLinkException(
        f'SSFM did not converge to {threshold_db} dB within {max_halvings} halvings of {cfg.step_km} km'
    )
