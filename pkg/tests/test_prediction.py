import math

import numpy as np
import pytest

from pbsslib.common.formating import dbm_to_watt
from pbsslib.core.__base__ import SymbolFrame
from pbsslib.core.prediction import measure_pnlin, eta_of, predict_gain, snr_ratio_at_optimum, snr_ratio_db, \
    optimal_launch_power, peak_snr, predict_schemes
from pbsslib.core.perturbation import predict_received
from pbsslib.core.receiver import CprConfig, insert_pilots
from pbsslib.core.shaping import SelectionConfig, solve_mb, select_frame
from pbsslib.exceptions import ZeroEnergyException, ConfigurationException


@pytest.fixture(scope='module')
def frames(small_kernel):
    mb = solve_mb(2.5, np.arange(1, 16, 2))
    cfg = SelectionConfig(L=64, K=256, N=16, interleaver_seed=3, metric='AM')
    selected = select_frame(mb, cfg, 1024, data_seed=7, kernel=small_kernel.with_gamma(small_kernel.gamma * 1e-3))
    baseline = SymbolFrame(selected.provenance['baseline'], block_length=64)
    return baseline, selected


def test_eta_of():
    assert eta_of(8e-6, 2e-3) == pytest.approx(1e3)
    with pytest.raises(ZeroEnergyException):
        eta_of(0.0, 1e-3)
    with pytest.raises(ZeroEnergyException):
        eta_of(1e-6, 0.0)


def test_predict_gain():
    assert predict_gain(-20.0, -20.0) == 0.0
    assert predict_gain(-20.9, -20.0) == pytest.approx(0.3)
    assert predict_gain(-20.0, -20.9) == pytest.approx(-0.3)


def test_snr_ratio_at_optimum():
    assert snr_ratio_at_optimum(1.0, 2.0) == pytest.approx(2 ** (1 / 3))
    assert snr_ratio_db(1.0, 2.0) == pytest.approx(10 * math.log10(2) / 3)
    assert snr_ratio_db(3.0, 3.0) == 0.0


def test_optimal_launch_power_maximizes_snr():
    p_ase, eta = 2e-5, 500.0
    power = optimal_launch_power(p_ase, eta)
    best = peak_snr(p_ase, eta)
    for factor in (0.8, 0.95, 1.05, 1.25):
        other = factor * power
        assert other / (p_ase + eta * other ** 3) < best
    assert eta * power ** 3 == pytest.approx(p_ase / 2)


def test_pnlin_is_cubic_in_power(small_kernel, frames):
    baseline, _ = frames
    low = measure_pnlin(baseline, small_kernel, 64, 0.0)
    high = measure_pnlin(baseline, small_kernel, 64, 3.0)
    assert high - low == pytest.approx(9.0, abs=1e-9)
    eta_low = eta_of(dbm_to_watt(low), dbm_to_watt(0.0))
    eta_high = eta_of(dbm_to_watt(high), dbm_to_watt(3.0))
    assert eta_high == pytest.approx(eta_low, rel=1e-10)


def test_pnlin_without_nonlinearity(small_kernel, frames):
    baseline, _ = frames
    assert measure_pnlin(baseline, small_kernel.with_gamma(0.0), 64, 0.0) == float('-inf')


def test_pnlin_leaves_pilots_out(small_kernel, frames):
    baseline, _ = frames
    piloted = insert_pilots(baseline, CprConfig(pilot_spacing=32))
    scaled = piloted.symbols * math.sqrt(1e-3)
    estimate = predict_received(scaled, small_kernel, 64, linearize_phase=True)
    distortion = np.abs(estimate.r_hat - scaled) ** 2
    expected = 10 * math.log10(np.mean(distortion[piloted.data_mask]) / 1e-3)
    assert measure_pnlin(piloted, small_kernel, 64, 0.0) == pytest.approx(expected, abs=1e-9)


def test_selected_frame_has_less_nlin(small_kernel, frames):
    baseline, selected = frames
    assert measure_pnlin(selected, small_kernel, 64, 0.0) < measure_pnlin(baseline, small_kernel, 64, 0.0)


def test_predict_schemes(small_kernel, frames):
    baseline, selected = frames
    records = predict_schemes({('none', 1): baseline, ('AM', 16): selected}, small_kernel, 64, 1.0)
    assert [(record.scheme, record.N) for record in records] == [('none', 1), ('AM', 16)]
    assert records[0].predicted_gain_db == 0.0
    assert records[1].predicted_gain_db > 0.0
    assert records[1].eta < records[0].eta
    expected = snr_ratio_db(records[1].eta, records[0].eta)
    assert records[1].predicted_gain_db == pytest.approx(expected, rel=1e-9)
    assert records[1].as_dict()['scheme'] == 'AM'


def test_predicted_gain_does_not_depend_on_power(small_kernel, frames):
    baseline, selected = frames
    gains = [predict_schemes({('none', 1): baseline, ('AM', 16): selected}, small_kernel, 64, power)[1]
             .predicted_gain_db for power in (-2.0, 0.0, 4.0)]
    assert np.ptp(gains) <= 1e-9


def test_predict_schemes_needs_baseline(small_kernel, frames):
    _, selected = frames
    with pytest.raises(ConfigurationException):
        predict_schemes({('AM', 16): selected}, small_kernel, 64, 0.0)
