import csv
import json
import math
import os

import pytest

from pbsslib.common.config import load_config
from pbsslib.common.formating import watt_to_dbm
from pbsslib.common.utils import MutableBool
from pbsslib.core import experiment
from pbsslib.core.experiment import ExperimentSetup, KernelStore, RunLog, SweepPoint, run_point, sweep, predict, \
    sweep_points, point_seed, fig1_rows, fig2_rows, transmit_frame, ROW_COLUMNS
from pbsslib.core.prediction import optimal_launch_power
from pbsslib.exceptions import SweepInterruptedException


def read_rows(path: str, drop: tuple[str, ...] = ('wallclock_s',)) -> list[dict]:
    with open(path, newline='', encoding='utf-8') as file:
        return [{key: value for key, value in row.items() if key not in drop} for row in csv.DictReader(file)]


def synthetic_row(metric: str, N: int, power: float, snr: float, repetition: int = 0) -> dict:
    return {'metric': metric, 'N': N, 'power_dbm': power, 'repetition': repetition, 'effective_snr_db': snr,
            'air_net': snr / 4, 'air_gross': snr / 4, 'predicted_gain_db': 0.1 * math.log2(N)}


def test_sweep_points(small_config):
    points = sweep_points(small_config)
    assert len(points) == 8
    assert points[0] == SweepPoint('none', 1, 0.0, 0)
    assert [point.N for point in points[:4]] == [1, 2, 4, 8]
    repeated = load_config(overrides=['sweep.repetitions=2', 'sweep.candidates=[1, 4]', 'sweep.metrics=["AM", "LSAS"]'])
    assert len(sweep_points(repeated)) == 2 * len(repeated.sweep.launch_powers_dbm) * 3
    assert point_seed(small_config, 0) != point_seed(small_config, 1)


def test_point_labels_are_file_safe():
    assert SweepPoint('AM', 16, -2.5, 1).label == 'AM_N16_P-2.50dBm_r1'


def test_transmit_frame_shares_data_between_schemes(small_config):
    setup = ExperimentSetup.from_config(small_config)
    kernel = KernelStore().get(setup.link, setup.kernel_pulse, setup.kernel_settings)
    baseline = transmit_frame(small_config, setup, kernel, 'none', 1, 11, 1)
    selected = transmit_frame(small_config, setup, kernel, 'AM', 4, 11, 1)
    assert len(selected) == small_config.grid.n_symbols
    assert (baseline.provenance['baseline'] == selected.provenance['baseline']).all()
    assert (baseline.pilot_positions == selected.pilot_positions).all()
    assert (baseline.symbols[baseline.pilot_positions] == selected.symbols[selected.pilot_positions]).all()


def test_transparent_link(config_file):
    config = load_config(config_file, ['link.gamma=0.0', 'ssfm.noiseless=true', 'shaping.target_rate=3.0'])
    row = run_point(config, 'none', 1, 0.0, seed=1)
    assert set(row) == set(ROW_COLUMNS)
    assert row['effective_snr_db'] > 35.0
    assert row['air_gross'] == pytest.approx(8.0, abs=0.05)
    assert row['rate_loss'] == 0.0
    assert row['p_nlin_dbm'] == float('-inf')
    assert math.isnan(row['predicted_gain_db'])


def test_run_point_is_deterministic(small_config):
    kernels = KernelStore()
    first = run_point(small_config, 'AM', 4, 0.0, seed=5, kernels=kernels)
    second = run_point(small_config, 'AM', 4, 0.0, seed=5, kernels=kernels)
    first.pop('wallclock_s')
    second.pop('wallclock_s')
    assert first == second
    assert first['air_gross'] - first['air_net'] == pytest.approx(2 / 64, abs=1e-12)
    assert first['rate_loss'] == 2 / 64
    assert sum(kernels.computations.values()) == 1


def test_run_log_records_stages(tmp_path, small_config):
    path = str(tmp_path / 'log.jsonl')
    run_point(small_config, 'none', 1, 0.0, seed=2, run_log=RunLog(path))
    with open(path, encoding='utf-8') as file:
        stages = [json.loads(line)['stage'] for line in file]
    assert stages == ['kernel', 'transmitter', 'ssfm', 'receiver', 'prediction']


def test_sweep(small_config, tmp_path):
    kernels = KernelStore()
    seen: list = []
    report = sweep(small_config, out_dir=str(tmp_path / 'first'), kernels=kernels, on_row=seen.append)
    assert len(report.rows) == 8 and len(seen) == 8
    assert report.failures == [] and not report.interrupted
    for name in ('rows.csv', 'fig1.csv', 'fig2.csv', 'report.json', 'run_log.jsonl'):
        assert os.path.isfile(tmp_path / 'first' / name)
    assert len(kernels.fingerprints) == 1
    assert set(kernels.computations.values()) == {1}
    assert report.kernel_computations == dict(kernels.computations)
    selected = [row['predicted_gain_db'] for row in report.rows if row['N'] == 8]
    assert sum(selected) / len(selected) > 0
    baseline = [row for row in report.rows if row['N'] == 1]
    assert all(row['predicted_gain_db'] == 0.0 for row in baseline)

    sweep(small_config, out_dir=str(tmp_path / 'second'))
    assert read_rows(str(tmp_path / 'first' / 'rows.csv')) == read_rows(str(tmp_path / 'second' / 'rows.csv'))
    with open(tmp_path / 'first' / 'report.json', encoding='utf-8') as file:
        stored = json.load(file)
    assert stored['environment']['seed'] == 3
    assert len(stored['rows']) == 8


def test_predict_does_not_propagate(small_config, tmp_path, monkeypatch):
    def fail(*args, **kwargs):
        raise AssertionError('prediction must not run the split-step solver')

    monkeypatch.setattr(experiment, 'propagate_link', fail)
    rows = predict(small_config, out_dir=str(tmp_path))
    assert [(row['metric'], row['N']) for row in rows] == [('none', 1), ('AM', 2), ('AM', 4), ('AM', 8)]
    assert rows[0]['predicted_gain_db'] == 0.0
    assert rows[-1]['predicted_gain_db'] > 0.0
    assert all(row['optimal_power_dbm'] > -30.0 for row in rows)
    assert os.path.isfile(tmp_path / 'fig1-predicted.csv')


def test_predict_uses_baseline_optimum(small_config, tmp_path):
    rows = predict(small_config, out_dir=str(tmp_path))
    baseline = rows[0]
    assert (baseline['metric'], baseline['N']) == ('none', 1)
    setup = ExperimentSetup.from_config(small_config)
    expected = watt_to_dbm(optimal_launch_power(experiment.ase_power(setup), baseline['eta']))
    assert all(row['power_dbm'] == pytest.approx(expected, abs=1e-9) for row in rows)
    assert baseline['optimal_power_dbm'] == pytest.approx(baseline['power_dbm'], abs=1e-9)


def test_predict_respects_reference_power(config_file, tmp_path):
    config = load_config(config_file, ['prediction.reference_power_dbm=1.5'])
    rows = predict(config, out_dir=str(tmp_path))
    assert all(row['power_dbm'] == 1.5 for row in rows)


def test_stopped_sweep_flushes_outputs(small_config, tmp_path):
    with pytest.raises(SweepInterruptedException):
        sweep(small_config, out_dir=str(tmp_path), stop_marker=MutableBool(True))
    assert read_rows(str(tmp_path / 'rows.csv')) == []
    with open(tmp_path / 'report.json', encoding='utf-8') as file:
        assert json.load(file)['interrupted'] is True


def test_failing_points_are_skipped(small_config, tmp_path, monkeypatch):
    original = experiment.run_point

    def flaky(config, metric, N, *args, **kwargs):
        if N == 2:
            raise RuntimeError('solver exploded')
        return original(config, metric, N, *args, **kwargs)

    monkeypatch.setattr(experiment, 'run_point', flaky)
    report = sweep(small_config, out_dir=str(tmp_path))
    assert len(report.rows) == 6
    assert len(report.failures) == 2
    assert report.failures[0]['error'] == {'type': 'RuntimeError', 'message': 'solver exploded'}
    assert len(read_rows(str(tmp_path / 'rows.csv'))) == 6


def test_fig1_rows():
    rows = [synthetic_row('none', 1, 0.0, 20.0), synthetic_row('none', 1, 2.0, 21.0),
            synthetic_row('AM', 4, 0.0, 20.5), synthetic_row('AM', 4, 2.0, 21.25)]
    figure = {(row['metric'], row['N'], row['power_dbm']): row for row in fig1_rows(rows)}
    assert figure[('AM', 4, 0.0)]['measured_gain_db'] == pytest.approx(0.5)
    assert figure[('AM', 4, 2.0)]['measured_gain_db'] == pytest.approx(0.25)
    assert figure[('none', 1, 2.0)]['measured_gain_db'] == 0.0
    assert figure[('AM', 4, 2.0)]['at_baseline_optimum']
    assert not figure[('AM', 4, 0.0)]['at_baseline_optimum']
    assert figure[('AM', 4, 0.0)]['predicted_gain_db'] == pytest.approx(0.2)


def test_fig2_rows_average_repetitions():
    rows = [synthetic_row('AM', 4, 0.0, 20.0, 0), synthetic_row('AM', 4, 0.0, 22.0, 1)]
    (figure,) = fig2_rows(rows)
    assert figure['repetitions'] == 2
    assert figure['air_net'] == pytest.approx(5.25)
    assert figure['effective_snr_db'] == pytest.approx(21.0)
    assert figure['air_net_ci'] > 0
