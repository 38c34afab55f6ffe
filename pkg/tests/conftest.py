import json
import math

import numpy as np
import pytest

from pbsslib.common.config import ExperimentConfig, load_config
from pbsslib.core.__base__ import LinkSpec, SamplingGrid
from pbsslib.core.perturbation import KernelSettings, compute_kernel
from pbsslib.core.signal import QamConstellation, rrc_pulse

SMALL_TOML: str = """\
preset = "desk"
seed = 3

[link]
n_spans = 2
span_length = 20.0

[grid]
oversampling = 8
n_symbols = 1024

[wdm]
rolloff = 0.5
pulse_span = 32
decimation = 2

[selection]
L = 64
K = 256
interleaver_seed = 5

[receiver]
pilot_spacing = 32
pilot_smoothing = 3

[ssfm]
step_km = 1.0

[kernel]
window_m = 8
window_k = 8
phase_window = 16
max_mk_product = 64
z_step_km = 1.0
oversampling = 8

[sweep]
launch_powers_dbm = [0.0, 2.0]
candidates = [1, 2, 4, 8]
metrics = ["AM"]
workers = 2
"""


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch):
    monkeypatch.delenv('PBSSLIB_CACHE_DIR', raising=False)
    monkeypatch.delenv('PBSSLIB_PROGRESS', raising=False)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(20240611))


@pytest.fixture
def qam_symbols(rng):
    def draw(n_symbols: int, order: int = 256) -> np.ndarray:
        points, _ = QamConstellation(order=order).points()
        return rng.choice(points, size=n_symbols)
    return draw


@pytest.fixture
def awgn(rng):
    def draw(n_symbols: int, variance: float) -> np.ndarray:
        return (rng.standard_normal(n_symbols) + 1j * rng.standard_normal(n_symbols)) * math.sqrt(variance / 2)
    return draw


@pytest.fixture(scope='session')
def small_link() -> LinkSpec:
    return LinkSpec.from_engineering(n_spans=2, span_length=20.0)


@pytest.fixture(scope='session')
def small_kernel(small_link):
    grid = SamplingGrid(symbol_rate=32e9, oversampling=8, n_symbols=128)
    settings = KernelSettings(window_m=8, window_k=8, phase_window=16, max_mk_product=64, z_step_km=1.0,
                              oversampling=8, symbol_rate=32e9)
    return compute_kernel(small_link, rrc_pulse(0.1, grid, span_symbols=16), settings=settings)


@pytest.fixture
def config_file(tmp_path) -> str:
    path = tmp_path / 'small.toml'
    path.write_text(SMALL_TOML + f'\n[output]\nout_dir = {json.dumps(str(tmp_path / "results"))}\n')
    return str(path)


@pytest.fixture
def small_config(config_file) -> ExperimentConfig:
    return load_config(config_file)
