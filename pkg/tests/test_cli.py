import json
from pathlib import Path

import pandas as pd
import pytest

from cli import main
from stages.coordinator_stage import output_dir, run

CONFIG_DIR = Path(__file__).resolve().parent.parent / 'configs'
TRAFFIC = str(CONFIG_DIR / 'traffic.cfg')
FULLNET = str(CONFIG_DIR / 'fullnet.cfg')

SMALL = ['--set', 'subsystem.state_upper=[6, 6]', '--set', 'subsystem.input_upper=[6]',
         '--set', 'abstraction.mc_samples=200']


def test_unknown_command(tmp_path):
    assert main(['bogus', TRAFFIC, '--out', str(tmp_path)]) == 2


def test_missing_config(tmp_path):
    assert main(['check-cert', str(tmp_path / 'nope.cfg'), '--out', str(tmp_path)]) == 2


@pytest.mark.parametrize('extra', [['--set', 'no-equals-sign'], ['--workers', '0'], ['--log-level', 'LOUD']])
def test_bad_flags(tmp_path, extra):
    assert main(['check-cert', TRAFFIC, '--out', str(tmp_path)] + extra) == 2


def test_check_cert_traffic(tmp_path, capsys):
    assert main(['check-cert', TRAFFIC, '--out', str(tmp_path)]) == 0
    report = json.loads((tmp_path / 'certificates.json').read_text())
    assert report['verified'] is True
    assert len(report['subsystems']) == 3
    assert (tmp_path / 'certificate_modes.csv').exists()
    assert 'certificates verified: True' in capsys.readouterr().out


def test_check_cert_fullnet_fails(tmp_path, capsys):
    assert main(['check-cert', FULLNET, '--out', str(tmp_path)]) == 1
    assert 'not verified' in capsys.readouterr().err
    pipeline = json.loads((tmp_path / 'pipeline.json').read_text())
    assert pipeline['exit_code'] == 1


def test_compose_check_small_ring(tmp_path):
    assert main(['compose-check', TRAFFIC, '--out', str(tmp_path)] + SMALL) == 0
    comp = json.loads((tmp_path / 'composition.json').read_text())
    assert comp['composition_lmi']['holds'] is True
    assert comp['internal_input_match']['holds'] is True
    assert comp['network_mc_max_violation'] <= 1e-9
    assert comp['psi'] == 0.99
    assert len(list(tmp_path.glob('*.symmodel'))) == 3


def test_psi_flag_overrides_config(tmp_path):
    assert main(['compose-check', TRAFFIC, '--out', str(tmp_path), '--psi', '0.5'] + SMALL) == 0
    comp = json.loads((tmp_path / 'composition.json').read_text())
    assert comp['psi'] == 0.5


def test_synthesize_small_ring_is_infeasible(tmp_path):
    """Green always overflows the small links and fairness forbids staying red"""
    assert main(['synthesize', TRAFFIC, '--out', str(tmp_path)] + SMALL) == 1


def test_report_collects_artifacts(tmp_path):
    assert main(['check-cert', TRAFFIC, '--out', str(tmp_path)]) == 0
    assert main(['report', TRAFFIC, '--out', str(tmp_path)]) == 0
    report = json.loads((tmp_path / 'report.json').read_text())
    assert report['executive_summary']['certificates_verified'] is True
    assert 'certificates' in report['artifacts']


def test_default_output_dir():
    assert output_dir(Path('configs/traffic.cfg')) == Path('configs/out/traffic')
    assert output_dir(Path('configs/traffic.cfg'), 'elsewhere') == Path('elsewhere')


def test_run_returns_exit_status(tmp_path):
    assert run('check-cert', TRAFFIC, {'out': str(tmp_path)}) == 0
    assert run('synthesize', FULLNET, {'out': str(tmp_path)}) == 2


@pytest.fixture(scope='module')
def traffic_run(tmp_path_factory):
    out = tmp_path_factory.mktemp('simulate')
    code = main(['simulate', TRAFFIC, '--out', str(out)])
    return code, out


def _longest_run(values, target=1):
    best = run = 0
    for v in values:
        run = run + 1 if v == target else 0
        best = max(best, run)
    return best


@pytest.mark.slow
def test_simulate_traffic_is_safe_and_fair(traffic_run):
    code, out = traffic_run
    assert code == 0
    frame = pd.read_csv(out / 'trajectory.csv')
    assert len(frame) == 1000
    for i in range(1, 4):
        assert frame[f'x_{i}_1'].between(-1e-9, 30 + 1e-9).all()
        assert frame[f'x_{i}_2'].between(-1e-9, 15 + 1e-9).all()
        assert _longest_run(frame[f'mode_{i}']) <= 2

    report = json.loads((out / 'simulation.json').read_text())
    assert report['trajectory_check']['is_valid'] is True
    assert max(report['summary']['longest_red_run']) <= 2
    paired = report['paired_run']
    assert paired['within_bound'] is True
    assert report['summary']['max_mismatch'] <= paired['eps_hat']


@pytest.mark.slow
def test_simulate_traffic_is_reproducible(traffic_run, tmp_path):
    _, first = traffic_run
    assert main(['simulate', TRAFFIC, '--out', str(tmp_path)]) == 0
    names = ['trajectory.csv'] + sorted(p.name for p in first.glob('*.ctrl')) \
        + sorted(p.name for p in first.glob('*.symmodel'))
    assert len(names) == 1 + 3 + 3
    for name in names:
        assert (tmp_path / name).read_bytes() == (first / name).read_bytes(), name
