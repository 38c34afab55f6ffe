"""
SNR gain prediction without SSFM: the perturbation model serves as a noiseless channel, the NLIN power of each
scheme gives its nonlinearity coefficient eta = P_NLIN / P^3, and the peak SNR ratio of two schemes follows as
(eta_2 / eta_1)^(1/3).
"""
import logging
import math
from dataclasses import dataclass, asdict
from typing import Union

import numpy as np

from .__base__ import SymbolFrame
from .perturbation import PerturbationKernel, predict_received
from ..common.formating import dbm_to_watt, watt_to_dbm, linear_to_db
from ..exceptions import ZeroEnergyException, ConfigurationException

log = logging.getLogger(__name__)


@dataclass
class PredictionRecord:
    scheme: str
    N: int
    launch_power_dbm: float
    p_nlin_dbm: float
    eta: float
    predicted_gain_db: float = 0.0
    measured_gain_db: Union[float, None] = None

    def as_dict(self) -> dict:
        return asdict(self)


def measure_pnlin(frame: SymbolFrame, kernel: PerturbationKernel, L: int, launch_power_dbm: float,
                  scope: str = 'block') -> float:
    """
    NLIN power of a frame after mean phase removal, under the first-order model. The frame has unit mean energy and
    is scaled to the launch power, the phase rotation is linearized so the result is exactly cubic in power.
    :param frame: Transmitted frame, pilots are left out of the average
    :param kernel: Perturbation kernel of the link
    :param L: Block length of the mean phase removal
    :param launch_power_dbm: Launch power per channel
    :param scope: Mean phase scope, 'block' or 'frame'
    :return: P_NLIN in dBm, -inf when the model predicts no distortion
    """
    scaled = frame.symbols * math.sqrt(dbm_to_watt(launch_power_dbm))
    estimate = predict_received(scaled, kernel, L, scope=scope, linearize_phase=True)
    distortion = np.abs(estimate.r_hat - scaled)[frame.data_mask] ** 2
    p_nlin: float = float(np.mean(distortion))
    if p_nlin == 0:
        return float('-inf')
    return float(watt_to_dbm(p_nlin))


def eta_of(p_nlin: float, launch_power: float) -> float:
    """
    Nonlinearity coefficient eta = P_NLIN / P^3
    :param p_nlin: NLIN power in W
    :param launch_power: Launch power in W
    :return: eta in 1/W^2
    """
    if not p_nlin > 0 or not launch_power > 0:
        raise ZeroEnergyException(f'eta needs positive powers, got P_NLIN={p_nlin} W and P={launch_power} W')
    return p_nlin / launch_power ** 3


def predict_gain(p_nlin_1: float, p_nlin_2: float) -> float:
    """
    Peak SNR gain in dB of a scheme with NLIN power p_nlin_1 over one with p_nlin_2, both in dBm at the same power
    """
    return (p_nlin_2 - p_nlin_1) / 3.0


def snr_ratio_at_optimum(eta_1: float, eta_2: float) -> float:
    """
    Ratio of the peak SNR of scheme 1 to the peak SNR of scheme 2, (eta_2 / eta_1)^(1/3)
    """
    return (eta_2 / eta_1) ** (1.0 / 3.0)


def optimal_launch_power(p_ase: float, eta: float) -> float:
    """
    Launch power maximizing P / (P_ASE + eta P^3)
    :param p_ase: Accumulated ASE power in the signal bandwidth, W
    :param eta: Nonlinearity coefficient, 1/W^2
    :return: Power in W
    """
    return (p_ase / (2.0 * eta)) ** (1.0 / 3.0)


def peak_snr(p_ase: float, eta: float) -> float:
    """
    SNR at the optimal launch power, linear
    """
    power: float = optimal_launch_power(p_ase, eta)
    return power / (p_ase + eta * power ** 3)


def predict_schemes(frames: dict[tuple[str, int], SymbolFrame], kernel: PerturbationKernel, L: int,
                    launch_power_dbm: float, baseline: tuple[str, int] = ('none', 1),
                    scope: str = 'block') -> list[PredictionRecord]:
    """
    Measures P_NLIN of every scheme at one power and predicts its gain over the baseline scheme
    :param frames: Transmit frames keyed by (metric, N), all drawn from the same data
    :param kernel: Perturbation kernel
    :param L: Selection block length
    :param launch_power_dbm: Reference power
    :param baseline: Key of the reference scheme
    :param scope: Mean phase scope
    :return: list of PredictionRecord in the order of frames
    """
    p_nlin: dict = {key: measure_pnlin(frame, kernel, L, launch_power_dbm, scope) for key, frame in frames.items()}
    if baseline not in p_nlin:
        raise ConfigurationException(f'Baseline scheme {baseline} is missing from the predicted schemes')
    power: float = dbm_to_watt(launch_power_dbm)
    records: list = []
    for (metric, n_candidates), value in p_nlin.items():
        eta: float = eta_of(dbm_to_watt(value), power) if math.isfinite(value) else 0.0
        gain: float = predict_gain(value, p_nlin[baseline]) if math.isfinite(value) else float('nan')
        records.append(PredictionRecord(scheme=metric, N=n_candidates, launch_power_dbm=launch_power_dbm,
                                        p_nlin_dbm=value, eta=eta, predicted_gain_db=gain))
        log.info('Predicted %s N=%d: P_NLIN %.3f dBm, gain %.3f dB', metric, n_candidates, value, gain)
    return records


def snr_ratio_db(eta_1: float, eta_2: float) -> float:
    return float(linear_to_db(snr_ratio_at_optimum(eta_1, eta_2)))
