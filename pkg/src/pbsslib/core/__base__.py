import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np
import scipy.constants as const

from ..exceptions import FrameLengthMismatchException, InvalidLinkException, BlockLayoutException


def is_power_of_two(value: int) -> bool:
    return value > 0 and (value & (value - 1)) == 0


@dataclass(frozen=True)
class SamplingGrid:
    """
    Time grid of a cyclic frame: n_symbols symbols at symbol_rate, each carried by oversampling samples
    """
    symbol_rate: float = 32e9
    oversampling: int = 16
    n_symbols: int = 2 ** 15

    def __post_init__(self):
        if self.oversampling < 2:
            raise FrameLengthMismatchException(f'Oversampling must be at least 2, got {self.oversampling}')
        if not is_power_of_two(self.n_symbols):
            raise FrameLengthMismatchException(f'Number of symbols must be a power of two, got {self.n_symbols}')
        if self.symbol_rate <= 0:
            raise FrameLengthMismatchException(f'Symbol rate must be positive, got {self.symbol_rate}')

    @property
    def sample_rate(self) -> float:
        return self.symbol_rate * self.oversampling

    @property
    def n_samples(self) -> int:
        return self.n_symbols * self.oversampling

    @property
    def symbol_period(self) -> float:
        return 1.0 / self.symbol_rate

    @property
    def sample_period(self) -> float:
        return 1.0 / self.sample_rate

    def frequencies(self) -> np.ndarray:
        """
        Returns the FFT frequency axis of the grid in Hz (numpy fft ordering)
        :return: ndarray of shape (n_samples,)
        """
        return np.fft.fftfreq(self.n_samples, d=self.sample_period)

    def times(self) -> np.ndarray:
        """
        Returns the sample instants in seconds, starting at zero
        :return: ndarray of shape (n_samples,)
        """
        return np.arange(self.n_samples) * self.sample_period

    def with_oversampling(self, oversampling: int) -> 'SamplingGrid':
        return dataclasses.replace(self, oversampling=oversampling)


@dataclass(frozen=True)
class WaveformBuffer:
    """
    Oversampled complex baseband field in sqrt(W), laid on a cyclic SamplingGrid
    """
    samples: np.ndarray
    grid: SamplingGrid
    center_frequency_offset: float = 0.0

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.shape[0] != self.grid.n_samples:
            raise FrameLengthMismatchException(
                f'Waveform holds {self.samples.shape} samples but its grid needs {self.grid.n_samples}'
            )

    def power(self) -> float:
        """
        Returns the average power of the waveform in W
        :return: float
        """
        return float(np.mean(np.abs(self.samples) ** 2))

    def energy(self) -> float:
        """
        Returns the squared l2 norm of the samples
        :return: float
        """
        return float(np.vdot(self.samples, self.samples).real)

    def with_samples(self, samples: np.ndarray) -> 'WaveformBuffer':
        return WaveformBuffer(samples=samples, grid=self.grid, center_frequency_offset=self.center_frequency_offset)

    def scaled(self, factor: Union[float, complex]) -> 'WaveformBuffer':
        return self.with_samples(self.samples * factor)


@dataclass(frozen=True)
class LinkSpec:
    """
    Physical parameters of a multi-span amplified fiber link, shared by the SSFM and the perturbation kernel.
    Units: span_length km, alpha 1/km (field power attenuation), beta2 ps^2/km, gamma 1/W/km, noise figure dB,
    center wavelength nm.
    """
    n_spans: int = 20
    span_length: float = 80.0
    alpha: float = 0.2 / (10 * math.log10(math.e))
    beta2: float = -21.6827  # D = 17 ps/nm/km at 1550 nm
    gamma: float = 1.37
    edfa_noise_figure: float = 6.0
    center_wavelength: float = 1550.0

    def __post_init__(self):
        if self.n_spans < 1:
            raise InvalidLinkException(f'A link needs at least one span, got {self.n_spans}')
        if self.span_length <= 0:
            raise InvalidLinkException(f'Span length must be positive, got {self.span_length}')
        if self.alpha < 0 or self.gamma < 0:
            raise InvalidLinkException(f'Loss and nonlinearity must not be negative (alpha={self.alpha}, '
                                       f'gamma={self.gamma})')
        if self.center_wavelength <= 0:
            raise InvalidLinkException(f'Center wavelength must be positive, got {self.center_wavelength}')

    @staticmethod
    def from_engineering(alpha_db_km: float = 0.2, dispersion_ps_nm_km: float = 17.0, gamma: float = 1.37,
                         n_spans: int = 20, span_length: float = 80.0, edfa_noise_figure: float = 6.0,
                         center_wavelength: float = 1550.0) -> 'LinkSpec':
        """
        Creates a LinkSpec from the datasheet units of a fiber
        :param alpha_db_km: Fiber loss in dB/km
        :param dispersion_ps_nm_km: Dispersion parameter D in ps/nm/km
        :param gamma: Nonlinearity parameter in 1/W/km
        :param n_spans: Number of spans
        :param span_length: Span length in km
        :param edfa_noise_figure: Amplifier noise figure in dB
        :param center_wavelength: Carrier wavelength in nm
        :return: LinkSpec Instance
        """
        wavelength_m: float = center_wavelength * 1e-9
        # D [ps/nm/km] -> s/m/km, beta2 = -D lambda^2 / (2 pi c) in s^2/km, then ps^2/km
        beta2: float = -(dispersion_ps_nm_km * 1e-3) * wavelength_m ** 2 / (2 * math.pi * const.c) * 1e24
        return LinkSpec(
            n_spans=n_spans,
            span_length=span_length,
            alpha=alpha_db_km / (10 * math.log10(math.e)),
            beta2=beta2,
            gamma=gamma,
            edfa_noise_figure=edfa_noise_figure,
            center_wavelength=center_wavelength,
        )

    @property
    def beta2_s2(self) -> float:
        """
        Returns beta2 in s^2/km
        :return: float
        """
        return self.beta2 * 1e-24

    @property
    def total_length(self) -> float:
        return self.n_spans * self.span_length

    @property
    def span_gain(self) -> float:
        """
        Returns the linear amplifier power gain that exactly offsets one span of loss
        :return: float
        """
        return math.exp(self.alpha * self.span_length)

    @property
    def center_frequency(self) -> float:
        return const.c / (self.center_wavelength * 1e-9)

    def effective_length(self, length: Union[float, None] = None) -> float:
        """
        Returns (1 - exp(-alpha length)) / alpha, or length itself for a lossless fiber
        :param length: Length in km, defaults to one span
        :return: Effective length in km
        """
        length = self.span_length if length is None else length
        if self.alpha == 0:
            return length
        return -math.expm1(-self.alpha * length) / self.alpha

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes: Any) -> 'LinkSpec':
        return dataclasses.replace(self, **changes)


@dataclass
class SymbolFrame:
    """
    Complex QAM symbol sequence with its selection block layout, pilot positions and provenance
    """
    symbols: np.ndarray
    block_length: int = 256
    pilot_positions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.complex128)
        if self.symbols.ndim != 1:
            raise FrameLengthMismatchException(f'A frame is one dimensional, got shape {self.symbols.shape}')
        if self.block_length < 1 or len(self.symbols) % self.block_length != 0:
            raise BlockLayoutException(
                f'Frame of {len(self.symbols)} symbols cannot be split in blocks of {self.block_length}'
            )

    def __len__(self):
        return len(self.symbols)

    @property
    def n_blocks(self) -> int:
        return len(self.symbols) // self.block_length

    @property
    def blocks(self) -> np.ndarray:
        """
        Returns a (n_blocks, block_length) view of the symbols
        :return: ndarray
        """
        return self.symbols.reshape(self.n_blocks, self.block_length)

    @property
    def data_mask(self) -> np.ndarray:
        """
        Returns a boolean mask that is False on pilot positions
        :return: ndarray of bool
        """
        mask = np.ones(len(self.symbols), dtype=bool)
        mask[self.pilot_positions] = False
        return mask

    def block_slice(self, block_index: int) -> slice:
        if not 0 <= block_index < self.n_blocks:
            raise BlockLayoutException(f'Block {block_index} out of range for a frame of {self.n_blocks} blocks')
        return slice(block_index * self.block_length, (block_index + 1) * self.block_length)

    def with_symbols(self, symbols: np.ndarray) -> 'SymbolFrame':
        return SymbolFrame(symbols=symbols, block_length=self.block_length, pilot_positions=self.pilot_positions,
                           provenance=dict(self.provenance))

    def energy(self) -> float:
        return float(np.mean(np.abs(self.symbols) ** 2))
