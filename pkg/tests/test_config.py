import pytest

from pbsslib.common.config import PRESETS, build_config, load_config, parse_override, key_lines
from pbsslib.exceptions import ConfigurationException


def write(tmp_path, text: str) -> str:
    path = tmp_path / 'experiment.toml'
    path.write_text(text)
    return str(path)


def test_defaults_use_desk_preset():
    config = load_config()
    assert config.preset == 'desk'
    assert config.grid.n_symbols == PRESETS['desk']['grid']['n_symbols']
    assert config.ssfm.step_km == 0.25
    assert config.selection.L == 256 and config.selection.K == 4096
    assert config.wdm.decimation == 4
    assert config.cache_dir is None


def test_paper_preset():
    config = load_config(overrides=['preset="paper"'])
    assert config.grid.n_symbols == 2 ** 18
    assert config.ssfm.step_km == 0.1
    assert load_config(overrides=['preset=paper']).preset == 'paper'


def test_file_values_take_precedence_over_preset(small_config):
    assert small_config.grid.n_symbols == 1024
    assert small_config.ssfm.step_km == 1.0
    assert small_config.sweep.metrics == ['AM']
    assert small_config.seed == 3


def test_overrides_are_applied_after_the_file(config_file):
    config = load_config(config_file, ['selection.L=128', 'link.gamma=0.0', 'sweep.candidates=[1, 4]'])
    assert config.selection.L == 128
    assert config.link.gamma == 0.0
    assert config.sweep.candidates == [1, 4]


@pytest.mark.parametrize('override,expected', [
    ('selection.L=64', ('selection.L', 64)),
    ('ssfm.noiseless = true', ('ssfm.noiseless', True)),
    ('sweep.launch_powers_dbm=[-1.0, 1.5]', ('sweep.launch_powers_dbm', [-1.0, 1.5])),
    ('ssfm.scheme=asymmetric', ('ssfm.scheme', 'asymmetric')),
])
def test_parse_override(override, expected):
    assert parse_override(override) == expected


@pytest.mark.parametrize('override', ['selection.L', '=3'])
def test_malformed_override(override):
    with pytest.raises(ConfigurationException):
        parse_override(override)


def test_error_points_at_line(tmp_path):
    path = write(tmp_path, 'seed = 1\n\n[receiver]\npilot_spacing = 50\npilot_smoothing = 4\n')
    with pytest.raises(ConfigurationException) as info:
        load_config(path)
    assert f'{path}:5' in str(info.value)
    assert 'receiver.pilot_smoothing' in str(info.value)


def test_unknown_key_is_rejected(tmp_path):
    path = write(tmp_path, '[selection]\nL = 64\nlength = 3\n')
    with pytest.raises(ConfigurationException) as info:
        load_config(path)
    assert f'{path}:3' in str(info.value)


def test_block_length_must_divide_fec_block(tmp_path):
    path = write(tmp_path, '[selection]\nL = 100\nK = 4096\n')
    with pytest.raises(ConfigurationException) as info:
        load_config(path)
    assert 'divisible' in str(info.value)


def test_empty_sweep_list(tmp_path):
    with pytest.raises(ConfigurationException):
        load_config(write(tmp_path, '[sweep]\ncandidates = []\n'))


def test_bad_candidate_count():
    with pytest.raises(ConfigurationException):
        build_config({'sweep': {'candidates': [1, 3]}})


def test_step_must_divide_span():
    with pytest.raises(ConfigurationException):
        build_config({'ssfm': {'step_km': 0.3}})


def test_unknown_preset():
    with pytest.raises(ConfigurationException):
        build_config({'preset': 'lab'})


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigurationException):
        load_config(str(tmp_path / 'missing.toml'))
    with pytest.raises(ConfigurationException):
        load_config(write(tmp_path, '[link\nn_spans = 2\n'))


def test_cache_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv('PBSSLIB_CACHE_DIR', str(tmp_path))
    assert load_config().cache_dir == str(tmp_path)
    assert load_config(overrides=['kernel.cache_dir=elsewhere']).cache_dir == 'elsewhere'


def test_key_lines():
    lines = key_lines('seed = 1\n# comment\n[link]\nn_spans = 2\n  span_length = 40.0\n[sweep]\nworkers=4\n')
    assert lines == {'seed': 1, 'link': 3, 'link.n_spans': 4, 'link.span_length': 5, 'sweep': 6,
                     'sweep.workers': 7}
