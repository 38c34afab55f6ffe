"""
Experiment configuration: a TOML file validated by pydantic models, on top of a named preset, patched by dotted
command line overrides. Validation errors point at the line of the offending key.
"""
import copy
import logging
import math
import os
import re
import tomllib
from typing import Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .utils import flatten_dictionary, set_dotted
from ..exceptions import ConfigurationException

log = logging.getLogger(__name__)

PRESETS: dict[str, dict] = {
    'desk': {'grid': {'n_symbols': 2 ** 15, 'oversampling': 16}, 'ssfm': {'step_km': 0.25}},
    'paper': {'grid': {'n_symbols': 2 ** 18, 'oversampling': 16}, 'ssfm': {'step_km': 0.1}},
}


def _power_of_two(value: int) -> bool:
    return value > 0 and (value & (value - 1)) == 0


class Section(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class LinkSection(Section):
    n_spans: int = Field(default=20, ge=1)
    span_length: float = Field(default=80.0, gt=0)
    alpha_db_km: float = Field(default=0.2, ge=0)
    dispersion_ps_nm_km: float = 17.0
    gamma: float = Field(default=1.37, ge=0)
    edfa_noise_figure: float = 6.0
    center_wavelength: float = Field(default=1550.0, gt=0)


class GridSection(Section):
    symbol_rate: float = Field(default=32e9, gt=0)
    oversampling: int = Field(default=16, ge=2)
    n_symbols: int = 2 ** 15

    @field_validator('n_symbols')
    @classmethod
    def check_n_symbols(cls, value: int) -> int:
        if not _power_of_two(value):
            raise ValueError(f'must be a power of two, got {value}')
        return value


class WdmSection(Section):
    n_channels: int = Field(default=3, ge=1)
    spacing: float = Field(default=50e9, gt=0)
    center_channel: int = Field(default=1, ge=0)
    rolloff: float = Field(default=0.1, ge=0, le=1)
    pulse_span: int = Field(default=64, ge=16)
    decimation: int = Field(default=4, ge=1)
    neighbor_selection: bool = True


class ShapingSection(Section):
    target_rate: float = Field(default=2.5, gt=0)
    order: int = 256


class SelectionSection(Section):
    L: int = Field(default=256, ge=1)
    K: int = Field(default=4096, ge=1)
    interleaver_seed: int = Field(default=0, ge=0)
    mean_phase_scope: Literal['block', 'frame'] = 'block'
    candidate_batch: int = Field(default=16, ge=1)

    @model_validator(mode='after')
    def check_blocks(self) -> 'SelectionSection':
        if self.K % self.L != 0:
            raise ValueError(f'K={self.K} must be divisible by L={self.L}')
        return self


class ReceiverSection(Section):
    pilot_spacing: int = Field(default=100, ge=2)
    pilot_smoothing: int = Field(default=5, ge=1)
    interpolation: Literal['linear'] = 'linear'
    optimize_variance: bool = False
    snr_ceiling_db: float = 100.0

    @field_validator('pilot_smoothing')
    @classmethod
    def check_smoothing(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f'must be odd, got {value}')
        return value


class SsfmSection(Section):
    step_km: float = Field(default=0.25, gt=0, le=1.0)
    scheme: Literal['symmetric', 'asymmetric'] = 'symmetric'
    noiseless: bool = False


class KernelSection(Section):
    window_m: int = Field(default=64, ge=1)
    window_k: int = Field(default=64, ge=1)
    phase_window: int = Field(default=128, ge=1)
    max_mk_product: int = Field(default=4096, ge=1)
    z_step_km: float = Field(default=0.25, gt=0)
    oversampling: int = Field(default=16, ge=2)
    time_symbols: Union[int, None] = None
    min_energy_capture: float = Field(default=0.9999, gt=0, le=1)
    cache_dir: Union[str, None] = None


class SweepSection(Section):
    launch_powers_dbm: list[float] = Field(default_factory=lambda: [-2.0, 0.0, 2.0, 4.0])
    candidates: list[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64])
    metrics: list[Literal['AM', 'LSAS']] = Field(default_factory=lambda: ['AM', 'LSAS'])
    repetitions: int = Field(default=1, ge=1)
    workers: int = Field(default=1, ge=1)

    @field_validator('launch_powers_dbm', 'candidates', 'metrics')
    @classmethod
    def check_not_empty(cls, value: list) -> list:
        if len(value) == 0:
            raise ValueError('sweep list must not be empty')
        return value

    @field_validator('candidates')
    @classmethod
    def check_candidates(cls, value: list[int]) -> list[int]:
        for n in value:
            if not _power_of_two(n):
                raise ValueError(f'candidate counts must be powers of two, got {n}')
        return value


class PredictionSection(Section):
    reference_power_dbm: Union[float, None] = None
    metrics: list[Literal['AM', 'LSAS']] = Field(default_factory=lambda: ['AM'])


class OutputSection(Section):
    out_dir: str = 'results'
    fig1: str = 'fig1.csv'
    fig2: str = 'fig2.csv'
    fig1_predicted: str = 'fig1-predicted.csv'
    rows: str = 'rows.csv'
    report: str = 'report.json'
    run_log: str = 'run_log.jsonl'


class ExperimentConfig(BaseModel):
    """
    Complete description of an experiment, every run is determined by it and the master seed
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    seed: int = Field(default=0, ge=0)
    preset: Literal['desk', 'paper'] = 'desk'
    link: LinkSection = LinkSection()
    grid: GridSection = GridSection()
    wdm: WdmSection = WdmSection()
    shaping: ShapingSection = ShapingSection()
    selection: SelectionSection = SelectionSection()
    receiver: ReceiverSection = ReceiverSection()
    ssfm: SsfmSection = SsfmSection()
    kernel: KernelSection = KernelSection()
    sweep: SweepSection = SweepSection()
    prediction: PredictionSection = PredictionSection()
    output: OutputSection = OutputSection()

    @model_validator(mode='after')
    def check_consistency(self) -> 'ExperimentConfig':
        if self.grid.n_symbols % self.selection.K != 0:
            raise ValueError(f'grid.n_symbols={self.grid.n_symbols} must be a multiple of selection.K={self.selection.K}')
        steps: float = self.link.span_length / self.ssfm.step_km
        if not math.isclose(steps, round(steps), rel_tol=1e-9):
            raise ValueError(f'ssfm.step_km={self.ssfm.step_km} must divide link.span_length={self.link.span_length}')
        if self.wdm.center_channel >= self.wdm.n_channels:
            raise ValueError(f'wdm.center_channel={self.wdm.center_channel} is not one of {self.wdm.n_channels} channels')
        total_band: float = (self.wdm.n_channels - 1) * self.wdm.spacing + (1 + self.wdm.rolloff) * self.grid.symbol_rate
        if total_band > self.grid.symbol_rate * self.grid.oversampling:
            raise ValueError(f'WDM band of {total_band:.4g} Hz does not fit the sample rate')
        if self.grid.oversampling % self.wdm.decimation != 0 or self.grid.oversampling // self.wdm.decimation < 2:
            raise ValueError(f'wdm.decimation={self.wdm.decimation} must divide grid.oversampling and keep at least '
                             f'2 samples per symbol')
        return self

    @property
    def cache_dir(self) -> Union[str, None]:
        return self.kernel.cache_dir or os.environ.get('PBSSLIB_CACHE_DIR') or None


def parse_override(override: str) -> tuple[str, Any]:
    """
    Splits a key.sub=value override, the value is read as a TOML literal and kept as a string otherwise
    :param override: Override text
    :return: (dotted key, value)
    """
    if '=' not in override:
        raise ConfigurationException(f'Override "{override}" is not of the form key.sub=value')
    key, raw = (part.strip() for part in override.split('=', 1))
    if not key:
        raise ConfigurationException(f'Override "{override}" has no key')
    try:
        value = tomllib.loads(f'value = {raw}')['value']
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


_TABLE = re.compile(r'^\s*\[\s*([A-Za-z0-9_.\- ]+?)\s*\]\s*(#.*)?$')
_ASSIGNMENT = re.compile(r'^\s*([A-Za-z0-9_\-]+(?:\s*\.\s*[A-Za-z0-9_\-]+)*)\s*=')


def key_lines(text: str) -> dict[str, int]:
    """
    Maps every dotted key assigned in a TOML text to the line it appears on (1 based)
    :param text: TOML document
    :return: dict of dotted key -> line number
    """
    lines: dict = {}
    table: str = ''
    for number, line in enumerate(text.splitlines(), start=1):
        match = _TABLE.match(line)
        if match:
            table = re.sub(r'\s+', '', match.group(1))
            lines.setdefault(table, number)
            continue
        match = _ASSIGNMENT.match(line)
        if match:
            key: str = re.sub(r'\s+', '', match.group(1))
            lines[f'{table}.{key}' if table else key] = number
    return lines


def _origin(location: tuple, origins: dict[str, str]) -> str:
    parts: list = [str(part) for part in location if not isinstance(part, int)]
    while parts:
        dotted: str = '.'.join(parts)
        if dotted in origins:
            return origins[dotted]
        parts.pop()
    return '<default>'


def _merge(base: dict, patch: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in patch.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def build_config(data: dict, overrides: Union[list[str], None] = None, lines: Union[dict[str, int], None] = None,
                 source: str = '<config>') -> ExperimentConfig:
    """
    Validates a configuration dictionary on top of its preset, after applying the overrides
    :param data: Parsed configuration
    :param overrides: key.sub=value strings
    :param lines: Line of each dotted key in the source file
    :param source: Name of the source used in error messages
    :return: ExperimentConfig
    """
    origins: dict = {key: f'{source}:{line}' for key, line in (lines or {}).items()}
    parsed_overrides: list = [parse_override(item) for item in overrides or []]
    for key, value in parsed_overrides:
        if key == 'preset':
            data = dict(data, preset=value)
    preset: str = str(data.get('preset', 'desk'))
    if preset not in PRESETS:
        raise ConfigurationException(f'{origins.get("preset", source)}: unknown preset "{preset}", '
                                     f'expected one of {sorted(PRESETS)}')
    for key in flatten_dictionary(PRESETS[preset]):
        origins.setdefault(key, f'<preset {preset}>')
    merged: dict = _merge(PRESETS[preset], data)
    for key, value in parsed_overrides:
        set_dotted(merged, key, value)
        origins[key] = '<override>'
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as exc:
        messages: list = []
        for error in exc.errors():
            location: str = '.'.join(str(part) for part in error['loc']) or '<root>'
            messages.append(f'{_origin(error["loc"], origins)}: {location}: {error["msg"]}')
        raise ConfigurationException('Invalid configuration\n' + '\n'.join(messages)) from exc


def load_config(path: Union[str, None] = None, overrides: Union[list[str], None] = None) -> ExperimentConfig:
    """
    Loads and validates a TOML configuration file, no file means the desk preset with its defaults
    :param path: Path of the TOML file
    :param overrides: key.sub=value strings applied after the file
    :return: ExperimentConfig
    """
    if path is None:
        return build_config({}, overrides)
    try:
        with open(path, 'rb') as file:
            raw: bytes = file.read()
    except OSError as exc:
        raise ConfigurationException(f'Cannot read configuration file "{path}": {exc}') from exc
    text: str = raw.decode('utf-8')
    try:
        data: dict = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationException(f'{path}: {exc}') from exc
    log.debug('Loaded configuration %s', path)
    return build_config(data, overrides, key_lines(text), source=str(path))
