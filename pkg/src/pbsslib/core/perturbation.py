"""
First-order intra-channel perturbation model of the received symbols,

    r(n) = s(n) exp(j theta(n)) + delta(n),
    theta(n) = gamma sum_m |s(n+m)|^2 h(m, 0),
    delta(n) = j gamma sum_{m != 0} sum_{k != 0} s(n+m) s*(n+m+k) s(n+k) h(m, k),

with the coefficients h(m, k) obtained from the overlap of four dispersed pulses along the link, and the selection
metrics built on it. All sums are cyclic over the frame.
"""
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.integrate import trapezoid
from tqdm import tqdm

from .__base__ import LinkSpec, SymbolFrame, is_power_of_two
from .signal import centered_taps
from ..common.utils import cached_arrays, fingerprint, progress_enabled
from ..exceptions import KernelGridException, KernelWindowException, BlockLayoutException

log = logging.getLogger(__name__)

MEAN_PHASE_SCOPES: tuple[str, ...] = ('block', 'frame')


@dataclass(frozen=True)
class KernelSettings:
    """
    Numerical settings of the coefficient integral. window_m/window_k bound the 2D table, phase_window bounds the
    h(m, 0) axis, entries with |m k| > max_mk_product are dropped.
    """
    window_m: int = 64
    window_k: int = 64
    phase_window: int = 128
    max_mk_product: int = 4096
    z_step_km: float = 0.25
    oversampling: int = 16
    symbol_rate: float = 32e9
    time_symbols: Union[int, None] = None
    min_energy_capture: float = 0.9999

    def __post_init__(self):
        if min(self.window_m, self.window_k, self.phase_window, self.max_mk_product) < 1:
            raise KernelWindowException(
                f'Kernel windows must be at least 1, got ({self.window_m}, {self.window_k}, {self.phase_window}, '
                f'{self.max_mk_product})'
            )
        if self.z_step_km <= 0 or self.oversampling < 2:
            raise KernelWindowException('Kernel z step must be positive and the time oversampling at least 2')
        if self.time_symbols is not None and not is_power_of_two(self.time_symbols):
            raise KernelGridException(f'Kernel time grid must be a power of two symbols, got {self.time_symbols}')

    @property
    def window(self) -> tuple[int, int, int]:
        return self.window_m, self.window_k, self.max_mk_product

    def with_window(self, window: tuple[int, int, int]) -> 'KernelSettings':
        window_m, window_k, cap = window
        return dataclasses.replace(self, window_m=window_m, window_k=window_k, max_mk_product=cap,
                                   phase_window=max(self.phase_window, window_m))


@dataclass(frozen=True, eq=False)
class PerturbationKernel:
    """
    Immutable table of perturbation coefficients in km. table[m + W_m, k + W_k] holds h(m, k) for |m| <= W_m,
    |k| <= W_k; phase_axis[m + W_p] holds the real h(m, 0) for |m| <= W_p.
    """
    table: np.ndarray
    phase_axis: np.ndarray
    gamma: float
    fingerprint: str = ''
    settings: Union[KernelSettings, None] = field(default=None, compare=False)

    def __post_init__(self):
        if self.table.ndim != 2 or self.table.shape[0] % 2 != 1 or self.table.shape[1] % 2 != 1:
            raise KernelWindowException(f'Kernel table must have odd dimensions, got {self.table.shape}')
        if self.phase_axis.ndim != 1 or self.phase_axis.shape[0] % 2 != 1:
            raise KernelWindowException(f'Kernel phase axis must have odd length, got {self.phase_axis.shape}')
        self.table.setflags(write=False)
        self.phase_axis.setflags(write=False)

    @property
    def window_m(self) -> int:
        return (self.table.shape[0] - 1) // 2

    @property
    def window_k(self) -> int:
        return (self.table.shape[1] - 1) // 2

    @property
    def phase_window(self) -> int:
        return (self.phase_axis.shape[0] - 1) // 2

    def h(self, m: int, k: int) -> complex:
        """
        Returns h(m, k), zero outside the stored window
        :param m: First index
        :param k: Second index
        :return: complex coefficient in km
        """
        if k == 0 and abs(m) <= self.phase_window:
            return complex(self.phase_axis[m + self.phase_window])
        if abs(m) <= self.window_m and abs(k) <= self.window_k:
            return complex(self.table[m + self.window_m, k + self.window_k])
        return 0j

    def with_gamma(self, gamma: float) -> 'PerturbationKernel':
        return dataclasses.replace(self, gamma=gamma, fingerprint=f'{self.fingerprint}:gamma={gamma!r}')

    def phase_only(self) -> 'PerturbationKernel':
        """
        Returns a copy whose additive entries (m != 0 and k != 0) are zero, which reduces the model to its
        multiplicative part
        :return: PerturbationKernel
        """
        table = np.zeros_like(self.table)
        table[:, self.window_k] = self.table[:, self.window_k]
        table[self.window_m, :] = self.table[self.window_m, :]
        return dataclasses.replace(self, table=table, fingerprint=f'{self.fingerprint}:phase-only')


@dataclass(frozen=True)
class ChannelSet:
    """
    WDM channels taking part in the model, with their carrier offsets. Only the intra-channel set is supported.
    """
    transmit_channel: int
    channels: tuple[int, ...]
    offsets: tuple[float, ...]
    intra_channel_only: bool = True

    def __post_init__(self):
        if self.transmit_channel not in self.channels:
            raise KernelWindowException(f'Channel {self.transmit_channel} is not part of the set {self.channels}')
        if len(self.offsets) != len(self.channels):
            raise KernelWindowException('Every channel of the set needs a carrier offset')
        if not self.intra_channel_only:
            raise KernelWindowException('Only intra-channel perturbation kernels are supported')

    @property
    def active_channels(self) -> tuple[int, ...]:
        return (self.transmit_channel,) if self.intra_channel_only else self.channels


@dataclass
class NlinEstimate:
    """
    Perturbative prediction for one frame (or a batch of frames along leading axes)
    """
    theta: np.ndarray
    delta: np.ndarray
    r_hat: np.ndarray
    mean_theta: np.ndarray
    block_length: int

    @property
    def n_blocks(self) -> int:
        return self.r_hat.shape[-1] // self.block_length


def dispersed_pulse(pulse: np.ndarray, beta2: float, distance: Union[float, np.ndarray], oversampling: int,
                    symbol_rate: float, n_samples: int) -> np.ndarray:
    """
    Returns the pulse centered at index 0 of a cyclic grid after linear propagation over distance
    :param pulse: Taps sampled at oversampling samples per symbol
    :param beta2: Dispersion in ps^2/km
    :param distance: Distance in km, or an array of distances
    :param oversampling: Samples per symbol of the taps
    :param symbol_rate: Symbol rate in Hz
    :param n_samples: Length of the cyclic grid
    :return: ndarray of shape (n_samples,) or (len(distance), n_samples)
    """
    frequencies = np.fft.fftfreq(n_samples, d=1.0 / (symbol_rate * oversampling))
    spectrum = np.fft.fft(centered_taps(pulse, n_samples).astype(np.complex128))
    distance = np.asarray(distance, dtype=float)
    phase = 1j * (beta2 * 1e-24 / 2.0) * (2 * np.pi * frequencies) ** 2
    return np.fft.ifft(spectrum * np.exp(np.multiply.outer(distance, phase)), axis=-1)


def _time_symbols(link: LinkSpec, pulse: np.ndarray, settings: KernelSettings) -> int:
    if settings.time_symbols is not None:
        return settings.time_symbols
    span_symbols: int = int(math.ceil(len(pulse) / settings.oversampling))
    # Walk-off across twice the symbol rate bounds the spread of any roll-off
    spread: float = abs(link.beta2_s2) * link.total_length * 2 * np.pi * 2 * settings.symbol_rate ** 2
    shift: int = max(settings.phase_window, settings.window_m + settings.window_k)
    needed: int = span_symbols + int(math.ceil(spread)) + 2 * shift + 16
    return 1 << (needed - 1).bit_length()


def _span_nodes(link: LinkSpec, z_step: float) -> np.ndarray:
    """
    Returns the z nodes of one span. Each span is integrated on its own so the power reset at every amplifier is
    exact.
    """
    n_steps: int = max(1, int(math.ceil(link.span_length / z_step - 1e-9)))
    return np.linspace(0.0, link.span_length, n_steps + 1)


def compute_kernel(link: LinkSpec, pulse: np.ndarray, window: Union[tuple[int, int, int], None] = None,
                   settings: KernelSettings = KernelSettings()) -> PerturbationKernel:
    """
    Computes h(m, k) = int_0^L f(z) K(z, m, k) dz with f(z) the span power profile and
    K(z, m, k) = 1/T int p*(z,t) p(z,t-mT) p*(z,t-(m+k)T) p(z,t-kT) dt. For every z and m >= 0 the k axis is the
    autocorrelation of v_m(t) = p*(z,t) p(z,t-mT), obtained with one FFT; negative m follow from h(-m,-k) = h(m,k).
    :param link: Link parameters (gamma is stored with the table, not folded into it)
    :param pulse: Transmit pulse taps at settings.oversampling samples per symbol, energy normalized
    :param window: (W_m, W_k, max |m k|), overrides the settings window
    :param settings: Integration settings
    :return: PerturbationKernel
    """
    if window is not None:
        settings = settings.with_window(window)
    window_m, window_k, cap = settings.window
    phase_window: int = max(settings.phase_window, window_m)
    oversampling: int = settings.oversampling
    n_symbols: int = _time_symbols(link, pulse, settings)
    n_samples: int = n_symbols * oversampling
    max_shift: int = max(phase_window, window_m + window_k)

    # The dispersed pulse must stay clear of the cyclic wrap for the largest shift
    farthest = dispersed_pulse(pulse, link.beta2, link.total_length, oversampling, settings.symbol_rate, n_samples)
    half_width: int = (n_symbols - max_shift) * oversampling // 2
    if half_width <= 0:
        raise KernelGridException(f'Kernel grid of {n_symbols} symbols cannot hold shifts of {max_shift} symbols')
    energy = np.abs(farthest) ** 2
    captured: float = float((energy[:half_width + 1].sum() + energy[-half_width:].sum()) / energy.sum())
    if captured < settings.min_energy_capture:
        raise KernelGridException(
            f'Kernel grid of {n_symbols} symbols captures only {captured:.6f} of the dispersed pulse energy'
        )

    local = _span_nodes(link, settings.z_step_km)
    profile = np.exp(-link.alpha * local)
    m_values = np.arange(0, window_m + 1)
    k_lags = (np.arange(-window_k, window_k + 1) * oversampling) % n_samples
    p_lags = (np.arange(0, phase_window + 1) * oversampling) % n_samples
    half_table = np.zeros((window_m + 1, 2 * window_k + 1), dtype=np.complex128)
    phase_half = np.zeros(phase_window + 1)

    log.info('Computing perturbation kernel: %d x %d z nodes, %d-sample time grid, window (%d, %d, %d), '
             'phase window %d', link.n_spans, len(local), n_samples, window_m, window_k, cap, phase_window)
    spans = range(link.n_spans)
    if progress_enabled():
        spans = tqdm(spans, desc='Kernel spans', unit='span', leave=False)
    for span in spans:
        span_table = np.empty((len(local),) + half_table.shape, dtype=np.complex128)
        span_phase = np.empty((len(local), phase_window + 1))
        for index, z in enumerate(span * link.span_length + local):
            p = dispersed_pulse(pulse, link.beta2, z, oversampling, settings.symbol_rate, n_samples)
            power_spectrum = np.abs(np.fft.fft(np.abs(p) ** 2)) ** 2
            span_phase[index] = np.fft.ifft(power_spectrum).real[p_lags] / oversampling
            shifted = np.stack([np.roll(p, m * oversampling) for m in m_values])
            products = np.conj(p)[None, :] * shifted
            autocorrelation = np.fft.ifft(np.abs(np.fft.fft(products, axis=-1)) ** 2, axis=-1)
            span_table[index] = autocorrelation[:, k_lags] / oversampling
        half_table += trapezoid(profile[:, None, None] * span_table, local, axis=0)
        phase_half += trapezoid(profile[:, None] * span_phase, local, axis=0)
        log.debug('Kernel span %d/%d integrated', span + 1, link.n_spans)

    table = np.zeros((2 * window_m + 1, 2 * window_k + 1), dtype=np.complex128)
    table[window_m:, :] = half_table
    # h(-m, -k) = h(m, k)
    table[:window_m, :] = half_table[:0:-1, ::-1]

    phase_axis = np.concatenate([phase_half[:0:-1], phase_half])
    table[:, window_k] = phase_axis[phase_window - window_m:phase_window + window_m + 1]
    reach: int = min(window_k, phase_window)
    table[window_m, window_k - reach:window_k + reach + 1] = phase_axis[phase_window - reach:phase_window + reach + 1]

    mm, kk = np.meshgrid(np.arange(-window_m, window_m + 1), np.arange(-window_k, window_k + 1), indexing='ij')
    table[np.abs(mm * kk) > cap] = 0.0

    key: str = kernel_fingerprint(link, pulse, settings)
    log.info('Kernel %s ready, h(0,0) = %.6g km', key[:12], phase_axis[phase_window])
    return PerturbationKernel(table=table, phase_axis=phase_axis, gamma=link.gamma, fingerprint=key,
                              settings=settings)


def kernel_fingerprint(link: LinkSpec, pulse: np.ndarray, settings: KernelSettings) -> str:
    """
    Returns the fingerprint of a kernel: hash of the link, the pulse taps and the integration settings
    """
    return fingerprint({'link': link.as_dict(), 'pulse': np.asarray(pulse, dtype=float),
                        'settings': dataclasses.asdict(settings)})


def save_kernel(kernel: PerturbationKernel, path: str) -> None:
    """
    Writes a kernel with full double precision to a .npz file
    :param kernel: Kernel to store
    :param path: Target file
    :return: None
    """
    np.savez(path, fingerprint=np.array(kernel.fingerprint), table=kernel.table, phase_axis=kernel.phase_axis,
             gamma=np.array(kernel.gamma), settings=np.array(_settings_json(kernel.settings)))


def load_kernel(path: str, expected_fingerprint: Union[str, None] = None) -> PerturbationKernel:
    """
    Reads a kernel written by save_kernel
    :param path: Source file
    :param expected_fingerprint: When given, the stored fingerprint must match exactly
    :return: PerturbationKernel
    """
    with np.load(path, allow_pickle=False) as stored:
        return _kernel_from_arrays({name: stored[name] for name in stored.files}, expected_fingerprint)


def _settings_json(settings: Union[KernelSettings, None]) -> str:
    return json.dumps(dataclasses.asdict(settings) if settings is not None else None)


def _kernel_from_arrays(arrays: dict, expected_fingerprint: Union[str, None] = None) -> PerturbationKernel:
    key: str = str(arrays['fingerprint'])
    if expected_fingerprint is not None and key != expected_fingerprint:
        raise KernelWindowException(f'Kernel fingerprint {key} does not match {expected_fingerprint}')
    settings_dict = json.loads(str(arrays['settings']))
    return PerturbationKernel(
        table=np.array(arrays['table']),
        phase_axis=np.array(arrays['phase_axis']),
        gamma=float(arrays['gamma']),
        fingerprint=key,
        settings=KernelSettings(**settings_dict) if settings_dict is not None else None,
    )


def cached_kernel(link: LinkSpec, pulse: np.ndarray, settings: KernelSettings,
                  cache_dir: Union[str, None]) -> tuple[PerturbationKernel, bool]:
    """
    Returns the kernel for (link, pulse, settings), computing it only when the cache holds no exact fingerprint match
    :param link: Link parameters
    :param pulse: Pulse taps
    :param settings: Integration settings
    :param cache_dir: Cache directory, None disables the disk cache
    :return: (kernel, True if it was read from the cache)
    """
    key: str = kernel_fingerprint(link, pulse, settings)

    def build() -> dict:
        kernel = compute_kernel(link, pulse, settings=settings)
        return {'table': kernel.table, 'phase_axis': kernel.phase_axis, 'gamma': np.array(kernel.gamma),
                'settings': np.array(_settings_json(kernel.settings))}

    arrays, hit = cached_arrays(cache_dir, key, build)
    arrays['fingerprint'] = np.array(key)
    return _kernel_from_arrays(arrays, key), hit


def _fold(values: np.ndarray, lags: np.ndarray, length: int) -> np.ndarray:
    folded = np.zeros(length, dtype=np.result_type(values, float))
    np.add.at(folded, lags % length, values)
    return folded


def _correlate(signal: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """
    Cyclic sum_m signal(n + m) taps(m) along the last axis, taps already folded to the signal length
    """
    return np.fft.ifft(np.fft.fft(signal, axis=-1) * np.conj(np.fft.fft(np.conj(taps))), axis=-1)


def _symbols(s: Union[SymbolFrame, np.ndarray]) -> np.ndarray:
    return s.symbols if isinstance(s, SymbolFrame) else np.asarray(s, dtype=np.complex128)


def phase_noise(s: Union[SymbolFrame, np.ndarray], kernel: PerturbationKernel) -> np.ndarray:
    """
    Multiplicative phase noise theta(n) = gamma sum_m |s(n+m)|^2 h(m, 0), cyclic over the frame
    Each neighbour enters once. The SPM and intra-channel XPM rotation of a split-step solver counts the (m, 0) and
    (0, m) terms separately, so theta is about half the rotation measured on a simulated link. The selection metrics
    only compare frames under the same model and keep this convention.
    :param s: Frame, or symbols with the frame along the last axis
    :param kernel: Perturbation kernel
    :return: Real phases in rad, same shape as the symbols
    """
    symbols = _symbols(s)
    length: int = symbols.shape[-1]
    lags = np.arange(-kernel.phase_window, kernel.phase_window + 1)
    taps = _fold(kernel.phase_axis.real, lags, length)
    return kernel.gamma * _correlate(np.abs(symbols) ** 2, taps).real


def additive_nlin(s: Union[SymbolFrame, np.ndarray], kernel: PerturbationKernel) -> np.ndarray:
    """
    Additive NLIN delta(n) = j gamma sum_{m != 0} sum_{k != 0} s(n+m) s*(n+m+k) s(n+k) h(m, k). For each m, the k sum
    is a cyclic correlation of u_m(j) = s(j) s*(j+m) with h(m, .).
    :param s: Frame, or symbols with the frame along the last axis
    :param kernel: Perturbation kernel
    :return: Complex additive NLIN, same shape as the symbols
    """
    symbols = _symbols(s)
    length: int = symbols.shape[-1]
    lags = np.arange(-kernel.window_k, kernel.window_k + 1)
    accumulated = np.zeros_like(symbols)
    for m in range(-kernel.window_m, kernel.window_m + 1):
        if m == 0:
            continue
        row = np.array(kernel.table[m + kernel.window_m, :])
        row[kernel.window_k] = 0.0
        if not np.any(row):
            continue
        shifted = np.roll(symbols, -m, axis=-1)
        accumulated += shifted * _correlate(symbols * np.conj(shifted), _fold(row, lags, length))
    return 1j * kernel.gamma * accumulated


def _block_view(values: np.ndarray, block_length: int) -> np.ndarray:
    length: int = values.shape[-1]
    if block_length < 1 or length % block_length != 0:
        raise BlockLayoutException(f'Frame of {length} symbols is not divisible in blocks of {block_length}')
    return values.reshape(values.shape[:-1] + (length // block_length, block_length))


def predict_received(s: Union[SymbolFrame, np.ndarray], kernel: PerturbationKernel, block_length: int,
                     scope: str = 'block', linearize_phase: bool = False,
                     include_additive: bool = True) -> NlinEstimate:
    """
    Predicts r_hat(n) = s(n) exp(j (theta(n) - mean_theta)) + delta(n), the received symbols after removal of the
    average phase rotation of each selection block (or of the whole frame)
    :param s: Frame, or symbols with the frame along the last axis
    :param kernel: Perturbation kernel
    :param block_length: Selection block length L
    :param scope: 'block' or 'frame', span of the mean phase removal
    :param linearize_phase: Use the first-order s (1 + j (theta - mean_theta)), which is exactly cubic in the field
    :param include_additive: When False delta is forced to zero
    :return: NlinEstimate
    """
    if scope not in MEAN_PHASE_SCOPES:
        raise BlockLayoutException(f'Unknown mean phase scope "{scope}", expected one of {MEAN_PHASE_SCOPES}')
    symbols = _symbols(s)
    theta = phase_noise(symbols, kernel)
    blocks = _block_view(theta, block_length)
    if scope == 'block':
        mean_theta = blocks.mean(axis=-1)
    else:
        mean_theta = np.broadcast_to(theta.mean(axis=-1, keepdims=True), blocks.shape[:-1]).copy()
    centered = (blocks - mean_theta[..., None]).reshape(theta.shape)
    delta = additive_nlin(symbols, kernel) if include_additive else np.zeros_like(symbols)
    rotation = 1.0 + 1j * centered if linearize_phase else np.exp(1j * centered)
    return NlinEstimate(theta=theta, delta=delta, r_hat=symbols * rotation + delta, mean_theta=mean_theta,
                        block_length=block_length)


def block_metrics(s: Union[SymbolFrame, np.ndarray], estimate: NlinEstimate) -> np.ndarray:
    """
    Squared l2 distance between prediction and symbols for every block
    :param s: Symbols the estimate was computed from
    :param estimate: NlinEstimate
    :return: ndarray of shape (..., n_blocks)
    """
    symbols = _symbols(s)
    return np.sum(np.abs(_block_view(estimate.r_hat - symbols, estimate.block_length)) ** 2, axis=-1)


def metric_am(s: Union[SymbolFrame, np.ndarray], estimate: NlinEstimate, block_index: int) -> float:
    """
    Additive-multiplicative selection metric of one block, sum over the block of |r_hat(n) - s(n)|^2
    :param s: Symbols of the frame the estimate was computed from
    :param estimate: NlinEstimate of that frame
    :param block_index: Index of the selection block
    :return: float
    """
    symbols = _symbols(s)
    if not 0 <= block_index < estimate.n_blocks:
        raise BlockLayoutException(f'Block {block_index} out of range for a frame of {estimate.n_blocks} blocks')
    window = slice(block_index * estimate.block_length, (block_index + 1) * estimate.block_length)
    return float(np.sum(np.abs(estimate.r_hat[..., window] - symbols[..., window]) ** 2))


def metric_lsas(s: Union[SymbolFrame, np.ndarray], kernel: PerturbationKernel, block_length: int, block_index: int,
                scope: str = 'block') -> float:
    """
    Energy-only metric: metric_am with delta forced to zero, sum |s(n)|^2 |exp(j (theta(n) - mean_theta)) - 1|^2
    :param s: Frame symbols
    :param kernel: Perturbation kernel
    :param block_length: Selection block length L
    :param block_index: Index of the selection block
    :param scope: Mean phase scope
    :return: float
    """
    estimate = predict_received(s, kernel, block_length, scope=scope, include_additive=False)
    return metric_am(s, estimate, block_index)
