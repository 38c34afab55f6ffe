import csv
import os

import pytest

from pbsslib.cli import main, EXIT_OK, EXIT_CONFIG


def test_selftest_passes(capsys):
    assert main(['selftest']) == EXIT_OK
    assert 'checks passed' in capsys.readouterr().out


def test_predict_command(config_file, tmp_path):
    out_dir = str(tmp_path / 'predicted')
    assert main(['predict', '--config', config_file, '--out-dir', out_dir, '-q']) == EXIT_OK
    assert os.path.isfile(os.path.join(out_dir, 'fig1-predicted.csv'))


def test_run_command(config_file, tmp_path):
    out_dir = str(tmp_path / 'single')
    arguments = ['run', '--config', config_file, '--out-dir', out_dir, '--metric', 'AM', '-N', '4', '--power', '1.0',
                 '--seed', '9', '-q']
    assert main(arguments) == EXIT_OK
    with open(os.path.join(out_dir, 'run.csv'), newline='', encoding='utf-8') as file:
        (row,) = list(csv.DictReader(file))
    assert row['metric'] == 'AM' and row['N'] == '4'
    assert float(row['power_dbm']) == 1.0


def test_kernel_command(config_file, tmp_path, capsys):
    arguments = ['kernel', '--config', config_file, '--override', f'kernel.cache_dir="{tmp_path / "cache"}"']
    assert main(arguments) == EXIT_OK
    assert os.path.isdir(tmp_path / 'cache' / 'kernel_cache')
    assert 'ready' in capsys.readouterr().out


def test_malformed_config_reports_line(tmp_path, capsys):
    path = tmp_path / 'broken.toml'
    path.write_text('[selection]\nL = 64\nK = 100\n')
    assert main(['predict', '--config', str(path)]) == EXIT_CONFIG
    assert f'{path}:' in capsys.readouterr().err


@pytest.mark.parametrize('override', ['selection.L', 'sweep.workers=0', 'grid.n_symbols=1000'])
def test_bad_override(config_file, override, capsys):
    assert main(['predict', '--config', config_file, '--override', override]) == EXIT_CONFIG
    assert 'Configuration error' in capsys.readouterr().err


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(['transmit'])
