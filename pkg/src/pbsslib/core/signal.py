"""
Deterministic DSP primitives shared by the transmitter, the channel and the receiver. Every frame is cyclic: filters
are applied as circular convolutions through the FFT, so shifting a symbol frame by k symbols shifts the waveform by
k * oversampling samples exactly.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .__base__ import SamplingGrid, WaveformBuffer, SymbolFrame, is_power_of_two
from ..exceptions import InvalidPulseException, FrameLengthMismatchException, WdmAliasingException

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QamConstellation:
    """
    Square QAM constellation built from odd amplitude levels per dimension, normalized to unit mean energy under a
    per-amplitude probability vector (uniform signs assumed)
    """
    order: int = 256
    probabilities: Union[np.ndarray, None] = field(default=None, compare=False)

    def __post_init__(self):
        side: int = math.isqrt(self.order)
        if side * side != self.order or not is_power_of_two(self.order) or self.order < 4 \
                or (self.order.bit_length() - 1) % 2 != 0:
            raise ValueError(f'QAM order must be a power of 4, got {self.order}')
        if self.probabilities is None:
            object.__setattr__(self, 'probabilities', np.full(side // 2, 1.0 / (side // 2)))
        probabilities = np.asarray(self.probabilities, dtype=float)
        if probabilities.shape != (side // 2,):
            raise ValueError(f'Expected {side // 2} amplitude probabilities, got {probabilities.shape}')
        object.__setattr__(self, 'probabilities', probabilities / probabilities.sum())

    @property
    def amplitude_levels(self) -> np.ndarray:
        """
        Returns the odd amplitude levels 1, 3, ... before normalization
        :return: ndarray of float
        """
        return np.arange(1, math.isqrt(self.order), 2, dtype=float)

    @property
    def normalization(self) -> float:
        """
        Returns the scale that brings the mean symbol energy to 1 under the attached probabilities
        :return: float
        """
        per_dimension: float = float(np.sum(self.probabilities * self.amplitude_levels ** 2))
        return 1.0 / math.sqrt(2.0 * per_dimension)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Returns every normalized constellation point together with its probability under the product distribution
        (amplitude probability times one half for the sign, per dimension)
        :return: (points, probabilities), both of shape (order,)
        """
        levels = np.concatenate([-self.amplitude_levels[::-1], self.amplitude_levels])
        level_probabilities = np.concatenate([self.probabilities[::-1], self.probabilities]) / 2.0
        in_phase, quadrature = np.meshgrid(levels, levels, indexing='ij')
        p_i, p_q = np.meshgrid(level_probabilities, level_probabilities, indexing='ij')
        points = (in_phase + 1j * quadrature).ravel() * self.normalization
        return points, (p_i * p_q).ravel()

    def mean_energy(self) -> float:
        points, probabilities = self.points()
        return float(np.sum(probabilities * np.abs(points) ** 2))


def rrc_response(t: np.ndarray, rolloff: float, symbol_rate: float) -> np.ndarray:
    """
    Closed-form root-raised-cosine impulse response with unit energy, h(0) = sqrt(Rs) (1 - rolloff + 4 rolloff / pi)
    :param t: Time instants in s
    :param rolloff: Roll-off factor in [0, 1]
    :param symbol_rate: Symbol rate in Hz
    :return: ndarray of float
    """
    if not 0.0 <= rolloff <= 1.0:
        raise InvalidPulseException(f'Roll-off must lie in [0, 1], got {rolloff}')
    period: float = 1.0 / symbol_rate
    x = np.asarray(t, dtype=float) / period
    response = np.empty_like(x)

    at_zero = np.isclose(x, 0.0, atol=1e-12)
    if rolloff > 0:
        at_singular = np.isclose(np.abs(x), 1.0 / (4.0 * rolloff), atol=1e-12)
    else:
        at_singular = np.zeros_like(at_zero)
    regular = ~(at_zero | at_singular)

    xr = x[regular]
    numerator = np.sin(np.pi * xr * (1 - rolloff)) + 4 * rolloff * xr * np.cos(np.pi * xr * (1 + rolloff))
    denominator = np.pi * xr * (1 - (4 * rolloff * xr) ** 2)
    response[regular] = numerator / denominator
    response[at_zero] = 1 - rolloff + 4 * rolloff / np.pi
    if rolloff > 0:
        response[at_singular] = rolloff / math.sqrt(2) * (
            (1 + 2 / np.pi) * math.sin(np.pi / (4 * rolloff)) + (1 - 2 / np.pi) * math.cos(np.pi / (4 * rolloff))
        )
    return response / math.sqrt(period)


def rrc_pulse(rolloff: float, grid: SamplingGrid, span_symbols: int = 64) -> np.ndarray:
    """
    Root-raised-cosine taps sampled at the grid sample rate, centered on the middle tap and normalized so that
    sum(taps^2) * sample_period = symbol_period. A frame of symbols with unit mean energy then gives a waveform of
    unit average power.
    :param rolloff: Roll-off factor in [0, 1]
    :param grid: Sampling grid giving symbol rate and oversampling
    :param span_symbols: Even number of symbols covered by the taps, at least 16
    :return: ndarray of span_symbols * oversampling + 1 real taps
    """
    if span_symbols < 16 or span_symbols % 2 != 0:
        raise InvalidPulseException(f'Pulse span must be even and at least 16 symbols, got {span_symbols}')
    n_taps: int = span_symbols * grid.oversampling + 1
    t = (np.arange(n_taps) - (n_taps - 1) / 2) * grid.sample_period
    taps = rrc_response(t, rolloff, grid.symbol_rate)
    energy: float = float(np.sum(taps ** 2)) * grid.sample_period
    return taps * math.sqrt(grid.symbol_period / energy)


def occupied_bandwidth(rolloff: float, symbol_rate: float) -> float:
    """
    Two-sided bandwidth (1 + rolloff) * Rs of a raised-cosine spectrum
    """
    return (1.0 + rolloff) * symbol_rate


def centered_taps(taps: np.ndarray, n_samples: int) -> np.ndarray:
    """
    Lays odd-length taps on a cyclic grid of n_samples with the middle tap at index 0, wrapping negative times to the
    end. Taps longer than the grid fold onto it, which is the cyclic equivalent of a linear filter.
    :param taps: Filter taps, odd length
    :param n_samples: Length of the cyclic grid
    :return: ndarray of shape (n_samples,)
    """
    center: int = (len(taps) - 1) // 2
    kernel = np.zeros(n_samples, dtype=np.result_type(taps, float))
    np.add.at(kernel, (np.arange(len(taps)) - center) % n_samples, taps)
    return kernel


def shape_waveform(frame: Union[SymbolFrame, np.ndarray], pulse: np.ndarray, grid: SamplingGrid) -> WaveformBuffer:
    """
    Upsamples a symbol frame to the grid and filters it with the pulse by circular convolution
    :param frame: SymbolFrame or complex symbols, one per grid symbol
    :param pulse: Pulse taps sampled at grid.sample_rate
    :param grid: Target sampling grid
    :return: WaveformBuffer
    """
    symbols = frame.symbols if isinstance(frame, SymbolFrame) else np.asarray(frame, dtype=np.complex128)
    if len(symbols) != grid.n_symbols:
        raise FrameLengthMismatchException(f'Frame has {len(symbols)} symbols, grid expects {grid.n_symbols}')
    upsampled = np.zeros(grid.n_samples, dtype=np.complex128)
    upsampled[::grid.oversampling] = symbols
    spectrum = np.fft.fft(upsampled) * np.fft.fft(centered_taps(pulse, grid.n_samples))
    return WaveformBuffer(samples=np.fft.ifft(spectrum), grid=grid)


def matched_filter_downsample(w: WaveformBuffer, pulse: np.ndarray) -> np.ndarray:
    """
    Correlates the waveform with the pulse and samples the output at the symbol instants, scaled so that a noiseless
    ISI-free waveform returns its symbols
    :param w: Baseband waveform of one channel
    :param pulse: Pulse taps sampled at w.grid.sample_rate
    :return: ndarray of grid.n_symbols complex symbols
    """
    kernel_spectrum = np.fft.fft(centered_taps(pulse, w.grid.n_samples))
    filtered = np.fft.ifft(np.fft.fft(w.samples) * np.conj(kernel_spectrum))
    return filtered[::w.grid.oversampling] / w.grid.oversampling


def cd_filter(w: WaveformBuffer, beta2: float, distance: float, sign: int = 1) -> WaveformBuffer:
    """
    Applies the chromatic dispersion all-pass H(f) = exp(sign j beta2 (2 pi f)^2 distance / 2). sign=+1 propagates,
    sign=-1 compensates. The frequency axis includes the buffer's center frequency offset.
    :param w: Waveform to filter
    :param beta2: Group velocity dispersion in ps^2/km
    :param distance: Fiber length in km
    :param sign: +1 or -1
    :return: Filtered WaveformBuffer
    """
    if distance == 0 or beta2 == 0:
        return w.with_samples(w.samples.copy())
    frequencies = w.grid.frequencies() + w.center_frequency_offset
    transfer = np.exp(sign * 1j * 2 * np.pi ** 2 * (beta2 * 1e-24) * frequencies ** 2 * distance)
    return w.with_samples(np.fft.ifft(np.fft.fft(w.samples) * transfer))


def channel_offsets(n_channels: int, spacing: float) -> np.ndarray:
    """
    Returns the carrier offsets of an n-channel WDM comb centered on zero
    :param n_channels: Number of channels
    :param spacing: Channel spacing in Hz
    :return: ndarray of offsets in Hz, lowest first
    """
    return (np.arange(n_channels) - (n_channels - 1) / 2.0) * spacing


def _offset_bins(offset: float, grid: SamplingGrid) -> int:
    resolution: float = grid.sample_rate / grid.n_samples
    bins: float = offset / resolution
    if not math.isclose(bins, round(bins), abs_tol=1e-6):
        raise WdmAliasingException(
            f'Channel offset {offset} Hz is not a multiple of the frequency resolution {resolution} Hz'
        )
    return int(round(bins))


def wdm_mux(channels: list[WaveformBuffer], spacing: float, channel_bandwidth: Union[float, None] = None,
            guard: float = 0.0) -> WaveformBuffer:
    """
    Frequency-shifts every baseband channel to its slot on the comb and sums them
    :param channels: Channel waveforms sharing one grid, lowest frequency first
    :param spacing: Channel spacing in Hz
    :param channel_bandwidth: Occupied bandwidth of one channel, defaults to the spacing
    :param guard: Extra fraction of the total band that must fit below the sample rate
    :return: Composite WaveformBuffer centered on the middle of the comb
    """
    if len(channels) == 0:
        raise FrameLengthMismatchException('At least one channel is needed for multiplexing')
    grid: SamplingGrid = channels[0].grid
    for channel in channels:
        if channel.grid != grid:
            raise FrameLengthMismatchException('All WDM channels must share one sampling grid')
    channel_bandwidth = spacing if channel_bandwidth is None else channel_bandwidth
    total_band: float = (len(channels) - 1) * spacing + channel_bandwidth
    if grid.sample_rate < total_band * (1.0 + guard):
        raise WdmAliasingException(
            f'Sample rate {grid.sample_rate:.4g} Hz cannot hold a WDM band of {total_band:.4g} Hz '
            f'with {guard:.0%} guard'
        )
    spectrum = np.zeros(grid.n_samples, dtype=np.complex128)
    for channel, offset in zip(channels, channel_offsets(len(channels), spacing)):
        spectrum += np.roll(np.fft.fft(channel.samples), _offset_bins(offset, grid))
    return WaveformBuffer(samples=np.fft.ifft(spectrum), grid=grid)


def wdm_demux(w: WaveformBuffer, channel_index: int, spacing: float, channel_bandwidth: float,
              n_channels: int = 3, decimation: int = 1) -> WaveformBuffer:
    """
    Shifts one channel to baseband, applies an ideal brick-wall lowpass of width channel_bandwidth and decimates
    :param w: Composite WDM waveform
    :param channel_index: Zero based channel index, lowest frequency first
    :param spacing: Channel spacing in Hz
    :param channel_bandwidth: Two-sided passband width in Hz
    :param n_channels: Number of channels on the comb
    :param decimation: Integer decimation factor applied after filtering
    :return: Channel WaveformBuffer; its center_frequency_offset is the channel carrier offset
    """
    if not 0 <= channel_index < n_channels:
        raise FrameLengthMismatchException(f'Channel {channel_index} does not exist on a {n_channels} channel comb')
    if decimation < 1 or w.grid.oversampling % decimation != 0:
        raise WdmAliasingException(f'Decimation {decimation} does not divide oversampling {w.grid.oversampling}')
    out_grid: SamplingGrid = w.grid.with_oversampling(w.grid.oversampling // decimation)
    if channel_bandwidth > out_grid.sample_rate:
        raise WdmAliasingException(
            f'Channel bandwidth {channel_bandwidth:.4g} Hz exceeds the decimated sample rate {out_grid.sample_rate:.4g}'
        )
    offset: float = float(channel_offsets(n_channels, spacing)[channel_index])
    spectrum = np.roll(np.fft.fft(w.samples), -_offset_bins(offset, w.grid))
    spectrum[np.abs(w.grid.frequencies()) > channel_bandwidth / 2.0] = 0.0

    n_out: int = out_grid.n_samples
    kept = np.concatenate([spectrum[:n_out // 2], spectrum[-(n_out // 2):]]) / decimation
    return WaveformBuffer(samples=np.fft.ifft(kept), grid=out_grid, center_frequency_offset=offset)
