import json

import pytest

from tinypose.cli import main
from tinypose.version import __version__

SPEC = {
    'scenario': 'packed',
    'seed': 0,
    'bin_extent': [0.1, 0.1, 0.15],
    'models': [{'class_id': 1, 'shape': 'box', 'size': [0.05, 0.05, 0.05],
                'count': 4}],
}

CONFIG = """
[hypgen]
num_bases = 3

[scoring]
perturbations_per_instance = 5

[gbrt]
n_trees = 5
holdout_fraction = 0.5
"""


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / 'spec.json'
    path.write_text(json.dumps(SPEC))
    return path


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / 'tinypose.toml'
    path.write_text(CONFIG)
    return path


def test_version(capsys):
    assert main(['--version']) == 0
    assert __version__ in capsys.readouterr().out


@pytest.mark.parametrize('argv', [
    [],
    ['simulate'],
    ['simulate', 'spec.json', '--out', 'x', '--bogus'],
    ['estimate', 'scenes', '--out', 'x', '--solver', 'annealing'],
])
def test_usage_errors(argv):
    assert main(argv) == 2


def test_simulate(tmp_path, spec_file):
    out = tmp_path / 'scenes'
    assert main(['simulate', str(spec_file), '--out', str(out), '-q']) == 0

    scene = out / 'scene000000'
    for name in ('scene.json', 'depth.pgm', 'instance_labels.pgm',
                 'models/models.json'):
        assert (scene / name).exists()
    assert json.loads((scene / 'scene.json').read_text())['scene_id'] \
        == 'scene000000'


def test_simulate_is_reproducible(tmp_path, spec_file):
    for name in ('first', 'second'):
        assert main(['simulate', str(spec_file), '--out',
                     str(tmp_path / name), '--seed', '5', '-q']) == 0

    first = (tmp_path / 'first' / 'scene000005' / 'scene.json').read_bytes()
    second = (tmp_path / 'second' / 'scene000005' / 'scene.json').read_bytes()
    assert first == second


def test_simulate_several_scenes(tmp_path, spec_file):
    out = tmp_path / 'scenes'
    assert main(['simulate', str(spec_file), '--out', str(out),
                 '--count', '3', '-q']) == 0
    assert sorted(p.name for p in out.iterdir()) \
        == ['scene000000', 'scene000001', 'scene000002']


def test_data_errors(tmp_path, spec_file):
    scenes = tmp_path / 'scenes'
    assert main(['simulate', str(tmp_path / 'missing.json'), '--out',
                 str(scenes), '-q']) == 3
    assert main(['simulate', str(spec_file), '--out', str(scenes),
                 '--jobs', '0', '-q']) == 3
    assert main(['predict-sim', str(tmp_path / 'nothing'), '-q']) == 3


def test_bad_config(tmp_path, spec_file):
    config = tmp_path / 'bad.toml'
    config.write_text('[hypgen]\nnum_bases = "many"\n[unknown]\nx = 1\n')
    assert main(['simulate', str(spec_file), '--out', str(tmp_path / 'out'),
                 '--config', str(config), '-q']) == 3


def test_config_from_environment(tmp_path, spec_file, monkeypatch):
    config = tmp_path / 'bad.toml'
    config.write_text('[nonsense]\n')
    monkeypatch.setenv('TINYPOSE_CONFIG', str(config))
    assert main(['simulate', str(spec_file), '--out', str(tmp_path / 'out'),
                 '-q']) == 3


def test_estimate_needs_ensemble(tmp_path, spec_file):
    scenes = tmp_path / 'scenes'
    assert main(['simulate', str(spec_file), '--out', str(scenes), '-q']) \
        == 0
    assert main(['predict-sim', str(scenes), '--noiseless', '-q']) == 0

    out = str(tmp_path / 'estimates')
    assert main(['estimate', str(scenes), '--out', out, '-q']) == 3
    assert main(['estimate', str(scenes), '--out', out, '--ensemble',
                 str(tmp_path / 'missing.json'), '-q']) == 3


def test_estimate_needs_predictions(tmp_path, spec_file):
    scenes = tmp_path / 'scenes'
    assert main(['simulate', str(spec_file), '--out', str(scenes), '-q']) \
        == 0
    assert main(['estimate', str(scenes), '--out', str(tmp_path / 'est'),
                 '--objective', 'oracle', '-q']) == 3


def test_end_to_end(tmp_path, spec_file, config_file):
    scenes = tmp_path / 'scenes'
    common = ['--config', str(config_file), '-q']

    assert main(['simulate', str(spec_file), '--out', str(scenes),
                 '--count', '2'] + common) == 0
    assert main(['predict-sim', str(scenes), '--noiseless'] + common) == 0
    assert main(['hypgen', str(scenes), '--out',
                 str(tmp_path / 'hypotheses')] + common) == 0
    assert (tmp_path / 'hypotheses' / 'scene000001.json').exists()

    ensemble = tmp_path / 'model' / 'ensemble.json'
    assert main(['train', str(scenes), '--out', str(ensemble)] + common) == 0
    assert ensemble.exists()
    assert (tmp_path / 'model' / 'ensemble.log.csv').exists()

    estimates = tmp_path / 'estimates'
    assert main(['estimate', str(scenes), '--ensemble', str(ensemble),
                 '--out', str(estimates)] + common) == 0
    assert sorted(p.name for p in estimates.iterdir()) \
        == ['scene000000.json', 'scene000001.json']

    results = tmp_path / 'results' / 'learned'
    assert main(['evaluate', str(estimates), str(scenes), '--out',
                 str(results)] + common) == 0
    summary = json.loads((results / 'summary.json').read_text())
    assert summary['num_gt'] == 8
    assert 0.0 <= summary['recall'] <= 1.0
    assert summary['k_l'] == 0.1
    assert (results / 'recall.csv').exists()

    report = tmp_path / 'report'
    assert main(['report', str(results / 'summary.json'), '--out',
                 str(report)] + common) == 0
    rows = json.loads((report / 'comparison.json').read_text())['runs']
    assert [row['run'] for row in rows] == ['learned']


def test_evaluate_unknown_scene(tmp_path, spec_file):
    scenes = tmp_path / 'scenes'
    assert main(['simulate', str(spec_file), '--out', str(scenes), '-q']) \
        == 0
    estimates = tmp_path / 'estimates'
    estimates.mkdir()
    (estimates / 'elsewhere.json').write_text(
        json.dumps({'scene_id': 'elsewhere', 'poses': []}))

    assert main(['evaluate', str(estimates), str(scenes), '--out',
                 str(tmp_path / 'results'), '-q']) == 3
