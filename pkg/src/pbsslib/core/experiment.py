"""
Orchestration of the full transmitter -> SSFM -> receiver pipeline over launch powers, candidate counts and
selection metrics, with the figure data written as CSV.
"""
import csv
import json
import logging
import math
import os
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, Future
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Union, Callable, Iterator

import numpy as np
from tqdm import tqdm

from .__base__ import LinkSpec, SamplingGrid, SymbolFrame
from .fiber import SsfmConfig, propagate_link, ase_psd
from .perturbation import KernelSettings, PerturbationKernel, cached_kernel, kernel_fingerprint
from .prediction import measure_pnlin, eta_of, predict_gain, predict_schemes, optimal_launch_power, peak_snr
from .receiver import CprConfig, MetricReport, insert_pilots, pilot_cpr, fit_scale, air_mismatched, \
    coherent_front_end, confidence_interval
from .shaping import MbDistribution, SelectionConfig, solve_mb, select_frame
from .signal import QamConstellation, rrc_pulse, shape_waveform, wdm_mux, wdm_demux, occupied_bandwidth
from ..common.config import ExperimentConfig
from ..common.formating import dbm_to_watt, watt_to_dbm, linear_to_db, format_float, sanitize_string
from ..common.utils import MutableBool, derive_seed, fingerprint, progress_enabled
from ..exceptions import SweepInterruptedException

log = logging.getLogger(__name__)

ROW_COLUMNS: tuple[str, ...] = (
    'metric', 'N', 'power_dbm', 'repetition', 'seed', 'effective_snr_db', 'snr_at_ceiling', 'air_gross', 'air_net',
    'rate_loss', 'residual_variance', 'p_nlin_dbm', 'predicted_gain_db', 'wallclock_s',
)
FIG1_COLUMNS: tuple[str, ...] = (
    'metric', 'N', 'power_dbm', 'at_baseline_optimum', 'repetitions', 'measured_gain_db', 'measured_gain_ci_db',
    'predicted_gain_db', 'predicted_gain_ci_db',
)
FIG2_COLUMNS: tuple[str, ...] = (
    'metric', 'N', 'power_dbm', 'repetitions', 'air_net', 'air_net_ci', 'air_gross', 'effective_snr_db',
)
PREDICTED_COLUMNS: tuple[str, ...] = (
    'metric', 'N', 'power_dbm', 'repetitions', 'p_nlin_dbm', 'eta', 'predicted_gain_db', 'predicted_gain_ci_db',
    'optimal_power_dbm', 'peak_snr_db',
)

# Stream tags of derive_seed, fixed so runs stay reproducible across versions
_DATA, _NOISE, _PILOTS, _INTERLEAVER = 1, 2, 3, 4


@dataclass(frozen=True)
class SweepPoint:
    metric: str
    N: int
    power_dbm: float
    repetition: int = 0

    @property
    def label(self) -> str:
        return sanitize_string(f'{self.metric}_N{self.N}_P{self.power_dbm:+.2f}dBm_r{self.repetition}')


@dataclass(frozen=True, eq=False)
class ExperimentSetup:
    """
    Domain objects derived from a validated configuration
    """
    link: LinkSpec
    grid: SamplingGrid
    rx_grid: SamplingGrid
    tx_pulse: np.ndarray
    rx_pulse: np.ndarray
    kernel_pulse: np.ndarray
    kernel_settings: KernelSettings
    mb: MbDistribution
    cpr: CprConfig

    @staticmethod
    def from_config(config: ExperimentConfig) -> 'ExperimentSetup':
        link = LinkSpec.from_engineering(
            alpha_db_km=config.link.alpha_db_km,
            dispersion_ps_nm_km=config.link.dispersion_ps_nm_km,
            gamma=config.link.gamma,
            n_spans=config.link.n_spans,
            span_length=config.link.span_length,
            edfa_noise_figure=config.link.edfa_noise_figure,
            center_wavelength=config.link.center_wavelength,
        )
        grid = SamplingGrid(config.grid.symbol_rate, config.grid.oversampling, config.grid.n_symbols)
        rx_grid = grid.with_oversampling(config.grid.oversampling // config.wdm.decimation)
        kernel_grid = grid.with_oversampling(config.kernel.oversampling)
        settings = KernelSettings(
            window_m=config.kernel.window_m,
            window_k=config.kernel.window_k,
            phase_window=config.kernel.phase_window,
            max_mk_product=config.kernel.max_mk_product,
            z_step_km=config.kernel.z_step_km,
            oversampling=config.kernel.oversampling,
            symbol_rate=config.grid.symbol_rate,
            time_symbols=config.kernel.time_symbols,
            min_energy_capture=config.kernel.min_energy_capture,
        )
        levels = QamConstellation(order=config.shaping.order).amplitude_levels
        return ExperimentSetup(
            link=link,
            grid=grid,
            rx_grid=rx_grid,
            tx_pulse=rrc_pulse(config.wdm.rolloff, grid, config.wdm.pulse_span),
            rx_pulse=rrc_pulse(config.wdm.rolloff, rx_grid, config.wdm.pulse_span),
            kernel_pulse=rrc_pulse(config.wdm.rolloff, kernel_grid, config.wdm.pulse_span),
            kernel_settings=settings,
            mb=solve_mb(config.shaping.target_rate, levels),
            cpr=CprConfig(pilot_spacing=config.receiver.pilot_spacing,
                          pilot_smoothing=config.receiver.pilot_smoothing,
                          interpolation=config.receiver.interpolation),
        )


class KernelStore:
    def __init__(self, cache_dir: Union[str, None] = None) -> None:
        """
        Shares perturbation kernels between sweep points, each fingerprint is computed (or read) at most once
        :param cache_dir: Directory of the on-disk kernel cache, None keeps kernels in memory only
        """
        self.cache_dir = cache_dir
        self.computations: Counter = Counter()
        self.__kernels: dict[str, PerturbationKernel] = {}
        self.__locks: dict[str, threading.Lock] = {}
        self.__guard = threading.Lock()

    def get(self, link: LinkSpec, pulse: np.ndarray, settings: KernelSettings) -> PerturbationKernel:
        """
        Returns the kernel of (link, pulse, settings)
        :param link: Link parameters
        :param pulse: Pulse taps at settings.oversampling
        :param settings: Integration settings
        :return: PerturbationKernel
        """
        key: str = kernel_fingerprint(link, pulse, settings)
        with self.__guard:
            lock = self.__locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self.__kernels:
                kernel, hit = cached_kernel(link, pulse, settings, self.cache_dir)
                if not hit:
                    self.computations[key] += 1
                log.info('Kernel %s %s', key[:12], 'read from cache' if hit else 'computed')
                self.__kernels[key] = kernel
            return self.__kernels[key]

    @property
    def fingerprints(self) -> list[str]:
        return sorted(self.__kernels)


class RunLog:
    def __init__(self, path: Union[str, None]) -> None:
        """
        JSON-lines log of stage timings and failures, safe to share between worker threads
        :param path: Target file, None discards the records
        """
        self.path = path
        self.__lock = threading.Lock()
        if path is not None:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            open(path, 'w').close()

    def write(self, record: dict) -> None:
        if self.path is None:
            return
        with self.__lock:
            with open(self.path, 'a', encoding='utf-8') as file:
                file.write(json.dumps(record, sort_keys=True) + '\n')

    @contextmanager
    def stage(self, point: str, stage: str) -> Iterator[None]:
        started: float = time.perf_counter()
        yield
        seconds: float = time.perf_counter() - started
        log.debug('%s: %s took %.3f s', point, stage, seconds)
        self.write({'point': point, 'stage': stage, 'seconds': seconds})


def _selection_config(config: ExperimentConfig, metric: str, N: int, channel: int) -> SelectionConfig:
    return SelectionConfig(
        L=config.selection.L,
        K=config.selection.K,
        N=N,
        interleaver_seed=derive_seed(config.selection.interleaver_seed, channel, _INTERLEAVER),
        metric=metric if N > 1 else 'none',
        mean_phase_scope=config.selection.mean_phase_scope,
        candidate_batch=config.selection.candidate_batch,
    )


def transmit_frame(config: ExperimentConfig, setup: ExperimentSetup, kernel: Union[PerturbationKernel, None],
                   metric: str, N: int, seed: int, channel: int, power: float = 0.0) -> SymbolFrame:
    """
    Shapes, selects and pilots the frame of one channel. The data depends on (seed, channel) only, so every scheme
    of a point sees the same amplitudes and signs. Candidates are scored at the launch power, the unit-energy
    symbols meet a kernel whose gamma is scaled by the power in W.
    :return: SymbolFrame with pilots, provenance keeps the unselected baseline frame
    """
    selection: SelectionConfig = _selection_config(config, metric, N, channel)
    frame = select_frame(setup.mb, selection, config.grid.n_symbols, derive_seed(seed, channel, _DATA),
                         kernel.with_gamma(kernel.gamma * dbm_to_watt(power)) if N > 1 else None)
    cpr = CprConfig(pilot_spacing=setup.cpr.pilot_spacing, pilot_smoothing=setup.cpr.pilot_smoothing,
                    interpolation=setup.cpr.interpolation, pilot_seed=derive_seed(seed, channel, _PILOTS))
    return insert_pilots(frame, cpr)


def run_point(config: ExperimentConfig, metric: str, N: int, power: float, seed: int,
              kernels: Union[KernelStore, None] = None, run_log: Union[RunLog, None] = None,
              repetition: int = 0, setup: Union[ExperimentSetup, None] = None) -> dict:
    """
    Runs one point of the sweep: selection on every WDM channel, pilots, pulse shaping, multiplexing, SSFM, center
    channel demultiplexing, CD compensation, matched filter, CPR, SNR and AIR
    :param config: Validated configuration
    :param metric: 'AM', 'LSAS' or 'none'
    :param N: Number of candidates
    :param power: Launch power per channel in dBm
    :param seed: Point seed, data, pilots and ASE derive from it
    :param kernels: Shared kernel store
    :param run_log: Stage timing log
    :param repetition: Repetition index, copied to the row
    :param setup: Domain objects, built from the config when omitted
    :return: Row dict with the ROW_COLUMNS keys
    """
    started: float = time.perf_counter()
    point = SweepPoint(metric if N > 1 else 'none', N, power, repetition)
    run_log = run_log or RunLog(None)
    kernels = kernels or KernelStore(config.cache_dir)
    setup = setup or ExperimentSetup.from_config(config)
    center: int = config.wdm.center_channel
    power_w: float = dbm_to_watt(power)

    with run_log.stage(point.label, 'kernel'):
        kernel = kernels.get(setup.link, setup.kernel_pulse, setup.kernel_settings)

    with run_log.stage(point.label, 'transmitter'):
        frames: list = []
        waveforms: list = []
        for channel in range(config.wdm.n_channels):
            selected: bool = channel == center or config.wdm.neighbor_selection
            frame = transmit_frame(config, setup, kernel, point.metric, N if selected else 1, seed, channel,
                                   power)
            frames.append(frame)
            waveforms.append(shape_waveform(frame, setup.tx_pulse, setup.grid).scaled(math.sqrt(power_w)))
        bandwidth: float = occupied_bandwidth(config.wdm.rolloff, config.grid.symbol_rate)
        launched = wdm_mux(waveforms, config.wdm.spacing, channel_bandwidth=bandwidth)

    with run_log.stage(point.label, 'ssfm'):
        ssfm = SsfmConfig(step_km=config.ssfm.step_km, scheme=config.ssfm.scheme,
                          noise_seed=derive_seed(seed, _NOISE), noiseless=config.ssfm.noiseless)
        received = propagate_link(launched, setup.link, ssfm)

    with run_log.stage(point.label, 'receiver'):
        channel_field = wdm_demux(received, center, config.wdm.spacing, bandwidth, config.wdm.n_channels,
                                  config.wdm.decimation)
        symbols = coherent_front_end(channel_field, setup.link, setup.rx_pulse) / math.sqrt(power_w)
        sent: SymbolFrame = frames[center]
        y = SymbolFrame(symbols=symbols, block_length=sent.block_length, pilot_positions=sent.pilot_positions)
        y = pilot_cpr(y, sent.provenance['pilots'], setup.cpr)
        y = y.with_symbols(y.symbols / fit_scale(sent, y))
        rate_loss: float = math.log2(N) / config.selection.L
        report: MetricReport = air_mismatched(sent, y, setup.mb.qam_probabilities(), rate_loss, launch_power=power,
                                              optimize_variance=config.receiver.optimize_variance,
                                              ceiling_db=config.receiver.snr_ceiling_db)

    with run_log.stage(point.label, 'prediction'):
        p_nlin: float = measure_pnlin(sent, kernel, config.selection.L, power, config.selection.mean_phase_scope)
        baseline_symbols = sent.provenance['baseline'].copy()
        baseline_symbols[sent.pilot_positions] = sent.symbols[sent.pilot_positions]
        baseline = sent.with_symbols(baseline_symbols)
        p_baseline: float = measure_pnlin(baseline, kernel, config.selection.L, power,
                                          config.selection.mean_phase_scope)
        gain: float = predict_gain(p_nlin, p_baseline) if math.isfinite(p_nlin) else float('nan')

    row: dict = {
        'metric': point.metric,
        'N': N,
        'power_dbm': power,
        'repetition': repetition,
        'seed': seed,
        'effective_snr_db': report.effective_snr,
        'snr_at_ceiling': report.snr_at_ceiling,
        'air_gross': report.air_gross,
        'air_net': report.air_net,
        'rate_loss': rate_loss,
        'residual_variance': report.residual_variance,
        'p_nlin_dbm': p_nlin,
        'predicted_gain_db': gain,
        'wallclock_s': time.perf_counter() - started,
    }
    log.info('%s: SNR %.3f dB, AIR net %.4f bits/2D', point.label, report.effective_snr, report.air_net)
    return row


def sweep_points(config: ExperimentConfig) -> list[SweepPoint]:
    """
    Returns the Cartesian sweep, the unselected baseline appears once per power and repetition
    """
    points: list = []
    for repetition in range(config.sweep.repetitions):
        for power in config.sweep.launch_powers_dbm:
            if 1 in config.sweep.candidates:
                points.append(SweepPoint('none', 1, power, repetition))
            for metric in config.sweep.metrics:
                for n_candidates in config.sweep.candidates:
                    if n_candidates > 1:
                        points.append(SweepPoint(metric, n_candidates, power, repetition))
    return points


def point_seed(config: ExperimentConfig, repetition: int) -> int:
    return derive_seed(config.seed, repetition)


def _format(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def write_csv(path: str, columns: tuple[str, ...], rows: list[dict]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    temp_name: str = path + '.tmp'
    with open(temp_name, 'w', newline='', encoding='utf-8') as file:
        writer = csv.writer(file)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row.get(column)) for column in columns])
    os.replace(temp_name, path)


def _group(rows: list[dict], *keys: str) -> dict[tuple, list[dict]]:
    groups: dict = {}
    for row in rows:
        groups.setdefault(tuple(row[key] for key in keys), []).append(row)
    return groups


def baseline_optimum(rows: list[dict]) -> Union[float, None]:
    """
    Launch power with the highest mean SNR of the unselected baseline
    """
    baseline = _group([row for row in rows if row['N'] == 1], 'power_dbm')
    if not baseline:
        return None
    return max(baseline, key=lambda key: np.mean([row['effective_snr_db'] for row in baseline[key]]))[0]


def fig1_rows(rows: list[dict]) -> list[dict]:
    """
    SNR gain of every (metric, N, power) over the baseline of the same power and repetition
    """
    baseline: dict = {(row['power_dbm'], row['repetition']): row for row in rows if row['N'] == 1}
    optimum = baseline_optimum(rows)
    output: list = []
    for (metric, n_candidates, power), group in _group(rows, 'metric', 'N', 'power_dbm').items():
        paired = [row for row in group if (power, row['repetition']) in baseline]
        measured = [row['effective_snr_db'] - baseline[(power, row['repetition'])]['effective_snr_db']
                    for row in paired]
        mean_gain, gain_ci = confidence_interval(measured)
        mean_prediction, prediction_ci = confidence_interval([row['predicted_gain_db'] for row in group])
        output.append({
            'metric': metric,
            'N': n_candidates,
            'power_dbm': power,
            'at_baseline_optimum': optimum is not None and power == optimum,
            'repetitions': len(group),
            'measured_gain_db': mean_gain,
            'measured_gain_ci_db': gain_ci,
            'predicted_gain_db': mean_prediction,
            'predicted_gain_ci_db': prediction_ci,
        })
    return output


def fig2_rows(rows: list[dict]) -> list[dict]:
    output: list = []
    for (metric, n_candidates, power), group in _group(rows, 'metric', 'N', 'power_dbm').items():
        air_net, air_ci = confidence_interval([row['air_net'] for row in group])
        output.append({
            'metric': metric,
            'N': n_candidates,
            'power_dbm': power,
            'repetitions': len(group),
            'air_net': air_net,
            'air_net_ci': air_ci,
            'air_gross': float(np.mean([row['air_gross'] for row in group])),
            'effective_snr_db': float(np.mean([row['effective_snr_db'] for row in group])),
        })
    return output


@dataclass
class ExperimentReport:
    rows: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    config_hash: str = ''
    code_version: str = ''
    seed: int = 0
    kernel_fingerprints: list[str] = field(default_factory=list)
    kernel_computations: dict[str, int] = field(default_factory=dict)
    interrupted: bool = False

    def as_dict(self) -> dict:
        return {
            'environment': {'config_hash': self.config_hash, 'code_version': self.code_version, 'seed': self.seed},
            'kernels': {'fingerprints': self.kernel_fingerprints, 'computations': self.kernel_computations},
            'interrupted': self.interrupted,
            'rows': self.rows,
            'failures': self.failures,
        }

    def write(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8') as file:
            json.dump(self.as_dict(), file, indent=2, default=lambda value: None if value is None else str(value))


def _code_version() -> str:
    from .. import __version__
    return __version__


def _output_path(config: ExperimentConfig, name: str, out_dir: Union[str, None]) -> str:
    return os.path.join(out_dir or config.output.out_dir, name)


def sweep(config: ExperimentConfig, out_dir: Union[str, None] = None, stop_marker: Union[MutableBool, None] = None,
          kernels: Union[KernelStore, None] = None,
          on_row: Union[Callable[[dict], None], None] = None) -> ExperimentReport:
    """
    Runs every sweep point in a worker pool and writes rows.csv, fig1.csv, fig2.csv, the JSON report and the run
    log. Rows are flushed as points complete; a failing point is logged and skipped.
    :param config: Validated configuration
    :param out_dir: Output directory, defaults to config.output.out_dir
    :param stop_marker: MutableBool, when set to true no further point is started
    :param kernels: Kernel store shared with other sweeps
    :param on_row: Called with every completed row
    :return: ExperimentReport
    """
    stop_marker = MutableBool(False) if stop_marker is None else stop_marker
    kernels = kernels or KernelStore(config.cache_dir)
    run_log = RunLog(_output_path(config, config.output.run_log, out_dir))
    setup = ExperimentSetup.from_config(config)
    points: list = sweep_points(config)
    order: dict = {point: index for index, point in enumerate(points)}
    report = ExperimentReport(config_hash=fingerprint(config.model_dump(mode='json')), code_version=_code_version(),
                              seed=config.seed)
    completed: dict = {}
    lock = threading.Lock()
    rows_path: str = _output_path(config, config.output.rows, out_dir)

    def worker(point: SweepPoint) -> None:
        if bool(stop_marker):
            return
        try:
            row = run_point(config, point.metric, point.N, point.power_dbm, point_seed(config, point.repetition),
                            kernels=kernels, run_log=run_log, repetition=point.repetition, setup=setup)
        except Exception as exc:
            log.error('Point %s failed: %s', point.label, exc)
            log.debug('Point %s traceback', point.label, exc_info=True)
            failure: dict = {'point': point.label, 'error': {'type': type(exc).__name__, 'message': str(exc)}}
            run_log.write(failure)
            with lock:
                report.failures.append(failure)
            return
        with lock:
            completed[point] = row
            write_csv(rows_path, ROW_COLUMNS, [completed[key] for key in sorted(completed, key=order.get)])
        if on_row is not None:
            on_row(row)

    log.info('Sweeping %d points with %d workers', len(points), config.sweep.workers)
    progress = tqdm(total=len(points), desc='Sweep', unit='point', disable=not progress_enabled())
    executor = ThreadPoolExecutor(max_workers=config.sweep.workers)
    try:
        futures: list[Future] = [executor.submit(worker, point) for point in points]
        for future in futures:
            future.result()
            progress.update(1)
    except KeyboardInterrupt:
        stop_marker.set(True)
        report.interrupted = True
        log.warning('Sweep interrupted, flushing %d completed points', len(completed))
    finally:
        executor.shutdown(wait=True, cancel_futures=True)
        progress.close()

    report.rows = [completed[key] for key in sorted(completed, key=order.get)]
    report.kernel_fingerprints = kernels.fingerprints
    report.kernel_computations = dict(kernels.computations)
    report.interrupted = report.interrupted or bool(stop_marker)
    write_csv(rows_path, ROW_COLUMNS, report.rows)
    write_csv(_output_path(config, config.output.fig1, out_dir), FIG1_COLUMNS, fig1_rows(report.rows))
    write_csv(_output_path(config, config.output.fig2, out_dir), FIG2_COLUMNS, fig2_rows(report.rows))
    report.write(_output_path(config, config.output.report, out_dir))
    if report.interrupted:
        raise SweepInterruptedException(f'Sweep stopped after {len(report.rows)} of {len(points)} points')
    return report


def reference_power(config: ExperimentConfig, setup: ExperimentSetup, kernel: PerturbationKernel) -> float:
    """
    Reference power of the prediction: the configured value, else the predicted optimum of the baseline frame of the
    first repetition. Without nonlinearity there is no optimum and 0 dBm is used.
    :param config: Validated configuration
    :param setup: Derived link, grid and pulses
    :param kernel: Kernel of the link
    :return: Launch power in dBm
    """
    if config.prediction.reference_power_dbm is not None:
        return config.prediction.reference_power_dbm
    baseline = transmit_frame(config, setup, kernel, 'none', 1, point_seed(config, 0), config.wdm.center_channel)
    p_nlin: float = measure_pnlin(baseline, kernel, config.selection.L, 0.0, scope=config.selection.mean_phase_scope)
    if not math.isfinite(p_nlin):
        log.warning('Baseline frame has no NLIN, predicting at 0 dBm')
        return 0.0
    eta: float = eta_of(dbm_to_watt(p_nlin), dbm_to_watt(0.0))
    power: float = watt_to_dbm(optimal_launch_power(ase_power(setup), eta))
    log.info('Predicting at the baseline optimum %.2f dBm', power)
    return power


def predict(config: ExperimentConfig, out_dir: Union[str, None] = None,
            kernels: Union[KernelStore, None] = None) -> list[dict]:
    """
    Predicts the SNR gain of every (metric, N) from the perturbation model alone and writes fig1-predicted.csv
    :param config: Validated configuration
    :param out_dir: Output directory, defaults to config.output.out_dir
    :param kernels: Kernel store
    :return: Rows of the predicted figure data
    """
    kernels = kernels or KernelStore(config.cache_dir)
    setup = ExperimentSetup.from_config(config)
    kernel = kernels.get(setup.link, setup.kernel_pulse, setup.kernel_settings)
    power: float = reference_power(config, setup, kernel)
    center: int = config.wdm.center_channel
    records: list = []
    for repetition in range(config.sweep.repetitions):
        seed: int = point_seed(config, repetition)
        frames: dict = {('none', 1): transmit_frame(config, setup, kernel, 'none', 1, seed, center, power)}
        for metric in config.prediction.metrics:
            for n_candidates in config.sweep.candidates:
                if n_candidates > 1:
                    frames[(metric, n_candidates)] = transmit_frame(config, setup, kernel, metric, n_candidates,
                                                                    seed, center, power)
        records.extend(predict_schemes(frames, kernel, config.selection.L, power,
                                       scope=config.selection.mean_phase_scope))
    p_ase: float = ase_power(setup)
    output: list = []
    for (metric, n_candidates), group in _group([record.as_dict() for record in records], 'scheme', 'N').items():
        gain, gain_ci = confidence_interval([record['predicted_gain_db'] for record in group])
        eta: float = float(np.mean([record['eta'] for record in group]))
        output.append({
            'metric': metric,
            'N': n_candidates,
            'power_dbm': power,
            'repetitions': len(group),
            'p_nlin_dbm': float(np.mean([record['p_nlin_dbm'] for record in group])),
            'eta': eta,
            'predicted_gain_db': gain,
            'predicted_gain_ci_db': gain_ci,
            'optimal_power_dbm': watt_to_dbm(optimal_launch_power(p_ase, eta)) if eta > 0 else float('nan'),
            'peak_snr_db': linear_to_db(peak_snr(p_ase, eta)) if eta > 0 else float('nan'),
        })
    write_csv(_output_path(config, config.output.fig1_predicted, out_dir), PREDICTED_COLUMNS, output)
    return output


def prepare_kernel(config: ExperimentConfig, kernels: Union[KernelStore, None] = None) -> PerturbationKernel:
    """
    Computes (or reads) the kernel of the configured link and stores it in the cache
    """
    kernels = kernels or KernelStore(config.cache_dir)
    setup = ExperimentSetup.from_config(config)
    return kernels.get(setup.link, setup.kernel_pulse, setup.kernel_settings)


def ase_power(setup: ExperimentSetup) -> float:
    """
    Accumulated ASE power inside the symbol rate bandwidth, W
    """
    return setup.link.n_spans * ase_psd(setup.link) * setup.grid.symbol_rate
