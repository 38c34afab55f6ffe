"""
Probabilistic amplitude shaping transmitter with an ideal distribution matcher, candidate generation by symbol
interleaving and per-block metric based sequence selection.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.optimize import bisect

from .__base__ import SymbolFrame, is_power_of_two
from .perturbation import PerturbationKernel, predict_received, block_metrics, MEAN_PHASE_SCOPES
from .signal import QamConstellation
from ..common.utils import derive_seed
from ..exceptions import UnreachableRateException, BlockLayoutException, NonFiniteMetricException

log = logging.getLogger(__name__)

METRICS: tuple[str, ...] = ('AM', 'LSAS', 'none')


def _entropy(probabilities: np.ndarray) -> float:
    nonzero = probabilities[probabilities > 0]
    return float(-np.sum(nonzero * np.log2(nonzero)))


def mb_probabilities(levels: np.ndarray, lam: float) -> np.ndarray:
    """
    Maxwell-Boltzmann probabilities p(a) proportional to exp(-lam a^2) on the given levels
    """
    levels = np.asarray(levels, dtype=float)
    exponent = -lam * (levels ** 2 - np.min(levels ** 2))
    weights = np.exp(exponent)
    return weights / weights.sum()


@dataclass(frozen=True, eq=False)
class MbDistribution:
    """
    Maxwell-Boltzmann amplitude distribution on a set of levels
    """
    lam: float
    levels: np.ndarray
    probabilities: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.lam < 0:
            raise UnreachableRateException(f'MB parameter must not be negative, got {self.lam}')
        object.__setattr__(self, 'levels', np.asarray(self.levels, dtype=float))
        object.__setattr__(self, 'probabilities', mb_probabilities(self.levels, self.lam))

    @property
    def entropy(self) -> float:
        """
        Returns the amplitude entropy in bits/amplitude
        :return: float
        """
        return _entropy(self.probabilities)

    @property
    def energy(self) -> float:
        """
        Returns E[a^2] of the unnormalized levels
        """
        return float(np.sum(self.probabilities * self.levels ** 2))

    def constellation(self) -> QamConstellation:
        """
        Returns the square QAM constellation built on these levels, normalized under this distribution
        :return: QamConstellation
        """
        return QamConstellation(order=(2 * len(self.levels)) ** 2, probabilities=self.probabilities)

    def qam_probabilities(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Returns the normalized 2D points and their probabilities (MB amplitudes, uniform signs, per dimension)
        :return: (points, probabilities)
        """
        return self.constellation().points()

    def sample_amplitudes(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(self.levels, size=size, p=self.probabilities)


def solve_mb(target_rate: float, levels: Union[np.ndarray, list]) -> MbDistribution:
    """
    Finds the MB distribution whose entropy equals target_rate by bisection on lambda
    :param target_rate: Entropy in bits/amplitude, 0 < rate <= log2(len(levels))
    :param levels: Amplitude levels
    :return: MbDistribution
    """
    levels = np.asarray(levels, dtype=float)
    maximum: float = math.log2(len(levels))
    if not 0 < target_rate <= maximum + 1e-12:
        raise UnreachableRateException(
            f'Rate {target_rate} bits/amplitude is unreachable on {len(levels)} levels (maximum {maximum})'
        )
    if target_rate >= maximum - 1e-12:
        return MbDistribution(lam=0.0, levels=levels)

    def excess(lam: float) -> float:
        return _entropy(mb_probabilities(levels, lam)) - target_rate

    upper: float = 1.0 / float(np.max(levels ** 2))
    while excess(upper) > 0:
        upper *= 2.0
        if upper > 1e6:
            raise UnreachableRateException(f'Rate {target_rate} bits/amplitude could not be bracketed')
    lam: float = bisect(excess, 0.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    distribution = MbDistribution(lam=lam, levels=levels)
    if abs(distribution.entropy - target_rate) > 1e-9:
        raise UnreachableRateException(
            f'Bisection stopped at entropy {distribution.entropy} for target {target_rate}'
        )
    log.debug('MB lambda %.12g reaches %.9f bits/amplitude', lam, distribution.entropy)
    return distribution


@dataclass(frozen=True)
class PasStreams:
    """
    Independent generators for in-phase amplitudes, quadrature amplitudes, in-phase signs and quadrature signs
    """
    i_amplitudes: np.random.Generator
    q_amplitudes: np.random.Generator
    i_signs: np.random.Generator
    q_signs: np.random.Generator

    @staticmethod
    def from_seed(seed: int) -> 'PasStreams':
        generators = [np.random.Generator(np.random.PCG64(child))
                      for child in np.random.SeedSequence(seed).spawn(4)]
        return PasStreams(*generators)


@dataclass(frozen=True)
class SelectionConfig:
    """
    Sequence selection settings: L symbols per selection block, K symbols per FEC block, N candidates per block
    """
    L: int = 256
    K: int = 4096
    N: int = 1
    interleaver_seed: int = 0
    metric: str = 'AM'
    mean_phase_scope: str = 'block'
    candidate_batch: int = 16

    def __post_init__(self):
        if self.L < 1 or self.K < 1 or self.K % self.L != 0:
            raise BlockLayoutException(f'FEC block of {self.K} symbols is not a multiple of L={self.L}')
        if not is_power_of_two(self.N):
            raise BlockLayoutException(f'Number of candidates must be a power of two, got {self.N}')
        if self.metric not in METRICS:
            raise BlockLayoutException(f'Unknown selection metric "{self.metric}", expected one of {METRICS}')
        if self.mean_phase_scope not in MEAN_PHASE_SCOPES:
            raise BlockLayoutException(f'Unknown mean phase scope "{self.mean_phase_scope}"')
        if self.candidate_batch < 1:
            raise BlockLayoutException('Candidate batch must be at least 1')

    @property
    def m_blocks(self) -> int:
        return self.K // self.L

    @property
    def rate_loss(self) -> float:
        """
        Returns the selection rate loss log2(N) / L in bits/2D
        :return: float
        """
        return math.log2(self.N) / self.L

    def replace(self, **changes) -> 'SelectionConfig':
        return dataclasses.replace(self, **changes)


def draw_pas_block(mb: MbDistribution, L: int, rng_streams: PasStreams) -> SymbolFrame:
    """
    Draws L QAM symbols with i.i.d. MB amplitudes and i.i.d. uniform signs per dimension, normalized to unit mean
    energy. This emulates an ideal distribution matcher with sign bits that are uniform.
    :param mb: Amplitude distribution
    :param L: Block length
    :param rng_streams: Independent streams for amplitudes and signs
    :return: SymbolFrame holding one block
    """
    scale: float = mb.constellation().normalization
    in_phase = mb.sample_amplitudes(rng_streams.i_amplitudes, L)
    quadrature = mb.sample_amplitudes(rng_streams.q_amplitudes, L)
    i_signs = 2.0 * rng_streams.i_signs.integers(0, 2, size=L) - 1.0
    q_signs = 2.0 * rng_streams.q_signs.integers(0, 2, size=L) - 1.0
    symbols = scale * (i_signs * in_phase + 1j * q_signs * quadrature)
    return SymbolFrame(symbols=symbols, block_length=L)


def interleaver(seed: int, block_id: int, candidate_id: int, length: int) -> np.ndarray:
    """
    Returns the permutation of candidate candidate_id for block block_id. A counter based generator keyed by
    (seed, block_id) with the candidate in the high counter word makes every permutation reproducible on its own.
    :param seed: 64 bit interleaver seed
    :param block_id: Global block index
    :param candidate_id: Candidate index, 0 is the identity
    :param length: Block length
    :return: ndarray of indices
    """
    if candidate_id == 0:
        return np.arange(length)
    key: int = (int(seed) & 0xFFFFFFFFFFFFFFFF) | ((int(block_id) & 0xFFFFFFFFFFFFFFFF) << 64)
    counter = np.array([0, 0, 0, candidate_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter)).permutation(length)


def generate_candidates(block: Union[SymbolFrame, np.ndarray], N: int, seed: int, block_id: int) -> np.ndarray:
    """
    Generates N candidates of a block by symbol interleaving, candidate 0 being the block itself
    :param block: Block symbols
    :param N: Number of candidates, at least 1
    :param seed: Interleaver seed
    :param block_id: Global block index
    :return: ndarray of shape (N, L)
    """
    if N < 1:
        raise BlockLayoutException(f'At least one candidate is needed, got {N}')
    symbols = block.symbols if isinstance(block, SymbolFrame) else np.asarray(block, dtype=np.complex128)
    return np.stack([symbols[interleaver(seed, block_id, n, len(symbols))] for n in range(N)])


def recover_block(candidate: np.ndarray, seed: int, block_id: int, candidate_id: int) -> np.ndarray:
    """
    Undoes the interleaving of a selected candidate given its index, as the receiver does with the side information
    :param candidate: Selected candidate symbols
    :param seed: Interleaver seed
    :param block_id: Global block index
    :param candidate_id: Transmitted candidate index
    :return: Original block symbols
    """
    permutation = interleaver(seed, block_id, candidate_id, len(candidate))
    original = np.empty_like(candidate)
    original[permutation] = candidate
    return original


def candidate_metrics(frames: np.ndarray, kernel: PerturbationKernel, cfg: SelectionConfig) -> np.ndarray:
    """
    Evaluates the selection metric of every block of every candidate frame
    :param frames: ndarray (N, K), frame n is candidate n of every block concatenated
    :param kernel: Perturbation kernel
    :param cfg: Selection settings
    :return: ndarray (N, m_blocks)
    """
    metrics = np.empty((frames.shape[0], frames.shape[1] // cfg.L))
    for start in range(0, frames.shape[0], cfg.candidate_batch):
        batch = frames[start:start + cfg.candidate_batch]
        estimate = predict_received(batch, kernel, cfg.L, scope=cfg.mean_phase_scope,
                                    include_additive=cfg.metric == 'AM')
        metrics[start:start + cfg.candidate_batch] = block_metrics(batch, estimate)
    return metrics


def select_sequences(blocks: np.ndarray, kernel: PerturbationKernel, cfg: SelectionConfig) -> SymbolFrame:
    """
    Selects one candidate per block. Candidate n of every block is concatenated into one K symbol frame, the
    perturbation model runs on that frame and each block keeps the candidate with the lowest metric (lowest index on
    ties). Inter-block effects of mixing winners from different frames are ignored. The blocks hold unit-energy
    symbols, so the kernel gamma carries the launch power: with_gamma(gamma * P) scores the candidates at P watts.
    :param blocks: ndarray (m_blocks, N, L)
    :param kernel: Perturbation kernel
    :param cfg: Selection settings
    :return: SymbolFrame of K symbols, provenance holds 'chosen' indices and the 'metrics' table
    """
    m_blocks, n_candidates, length = blocks.shape
    if length != cfg.L or m_blocks * length != cfg.K:
        raise BlockLayoutException(f'Candidates of shape {blocks.shape} do not match L={cfg.L}, K={cfg.K}')
    if n_candidates == 1 or cfg.metric == 'none':
        chosen = np.zeros(m_blocks, dtype=np.int64)
        return SymbolFrame(symbols=blocks[:, 0, :].reshape(-1), block_length=cfg.L,
                           provenance={'chosen': chosen})

    frames = blocks.transpose(1, 0, 2).reshape(n_candidates, cfg.K)
    metrics = candidate_metrics(frames, kernel, cfg)
    if not np.all(np.isfinite(metrics)):
        raise NonFiniteMetricException(f'{cfg.metric} metric is not finite for {np.sum(~np.isfinite(metrics))} blocks')
    chosen = np.argmin(metrics, axis=0)
    selected = blocks[np.arange(m_blocks), chosen, :].reshape(-1)
    log.debug('Selected candidates %s, metric gain %.3f dB', chosen.tolist(),
              10 * np.log10(metrics[0].sum() / max(metrics[chosen, np.arange(m_blocks)].sum(), 1e-300)))
    return SymbolFrame(symbols=selected, block_length=cfg.L,
                       provenance={'chosen': chosen, 'metrics': metrics})


def rate_accounting(cfg: SelectionConfig, mb: Union[MbDistribution, None] = None,
                    constellation_order: int = 256) -> tuple[float, float]:
    """
    Returns (gross rate, selection rate loss) in bits/2D. The gross rate is 2 (H(A) + 1) for a shaped source and
    log2(order) without shaping.
    :param cfg: Selection settings
    :param mb: Amplitude distribution of the source, None for uniform
    :param constellation_order: QAM order when unshaped
    :return: (gross, loss)
    """
    gross: float = 2.0 * (mb.entropy + 1.0) if mb is not None else math.log2(constellation_order)
    return gross, cfg.rate_loss


def select_frame(mb: MbDistribution, cfg: SelectionConfig, n_symbols: int, data_seed: int,
                 kernel: Union[PerturbationKernel, None]) -> SymbolFrame:
    """
    Builds a frame of n_symbols from independent FEC blocks of K symbols, each shaped and selected on its own
    :param mb: Amplitude distribution
    :param cfg: Selection settings
    :param n_symbols: Frame length, a multiple of K
    :param data_seed: Seed of the amplitude and sign streams
    :param kernel: Perturbation kernel, unused when N == 1
    :return: SymbolFrame; provenance holds 'chosen' (n_fec, m_blocks) and the unselected 'baseline' symbols
    """
    if n_symbols % cfg.K != 0:
        raise BlockLayoutException(f'Frame of {n_symbols} symbols is not a multiple of K={cfg.K}')
    if cfg.N > 1 and kernel is None:
        raise BlockLayoutException('Selection among several candidates needs a perturbation kernel')
    n_fec: int = n_symbols // cfg.K
    symbols: list = []
    baseline: list = []
    chosen: list = []
    for fec in range(n_fec):
        blocks = np.empty((cfg.m_blocks, cfg.N, cfg.L), dtype=np.complex128)
        for index in range(cfg.m_blocks):
            block_id: int = fec * cfg.m_blocks + index
            block = draw_pas_block(mb, cfg.L, PasStreams.from_seed(derive_seed(data_seed, block_id)))
            blocks[index] = generate_candidates(block, cfg.N, cfg.interleaver_seed, block_id)
        selected = select_sequences(blocks, kernel, cfg)
        symbols.append(selected.symbols)
        baseline.append(blocks[:, 0, :].reshape(-1))
        chosen.append(selected.provenance['chosen'])
    return SymbolFrame(
        symbols=np.concatenate(symbols),
        block_length=cfg.L,
        provenance={'chosen': np.stack(chosen), 'baseline': np.concatenate(baseline), 'data_seed': data_seed,
                    'interleaver_seed': cfg.interleaver_seed},
    )
