import pytest

from tinypose.config import (CONFIG_ENV_VAR, Config, HypgenSettings,
                             default_config_path, load_config)
from tinypose.errors import ConfigError
from tinypose.utils import freeze


def test_defaults():
    config = Config()
    assert config.hypgen.delta == 0.5
    assert config.hypgen.gamma == 0.9
    assert config.hypgen.num_bases == 100
    assert config.hypgen.max_hypotheses == 130
    assert config.scoring.delta_s == 0.005
    assert config.scoring.delta_b == 10.0
    assert config.gbrt.n_trees == 200
    assert config.gbrt.max_depth == 3
    assert config.select.k_l == pytest.approx(0.1)
    assert config.render.width == 320 and config.render.height == 240


def test_epsilon_default_is_quarter_diagonal():
    assert HypgenSettings().epsilon_for(320, 240) == pytest.approx(100.0)
    assert HypgenSettings(epsilon_hops=7).epsilon_for(320, 240) == 7.0


def test_load_config(tmp_path):
    path = tmp_path / 'run.toml'
    path.write_text('[hypgen]\nnum_bases = 12\n\n'
                    '[select]\nsolver = "greedy"\n')
    config = load_config(str(path))

    assert config.hypgen.num_bases == 12
    assert config.hypgen.gamma == 0.9
    assert config.select.solver == 'greedy'


def test_load_config_without_path():
    assert load_config(None) == Config()


@pytest.mark.parametrize('text', [
    '[nonsense]\na = 1\n',
    '[hypgen]\nnot_a_key = 1\n',
    '[select]\nsolver = "simplex"\n',
    '[hypgen]\ngamma = 1.5\n',
    'hypgen = 3\n',
    '[hypgen\n',
])
def test_load_config_rejects(tmp_path, text):
    path = tmp_path / 'bad.toml'
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_lists_become_tuples():
    config = Config.from_dict({'scene': {'bin_center': [0.0, 0.0, 0.5]}})
    assert config.scene.bin_center == (0.0, 0.0, 0.5)


def test_with_section():
    config = Config().with_section('hypgen', num_bases=3)
    assert config.hypgen.num_bases == 3
    assert Config().hypgen.num_bases == 100


def test_round_trip_and_hashable():
    config = Config().with_section('select', solver='greedy')
    assert Config.from_dict(config.to_dict()) == config
    assert hash(freeze(config.to_dict())) \
        == hash(freeze(Config.from_dict(config.to_dict()).to_dict()))


def test_default_config_path(monkeypatch):
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
    assert default_config_path() is None

    monkeypatch.setenv(CONFIG_ENV_VAR, '/tmp/tinypose.toml')
    assert default_config_path() == '/tmp/tinypose.toml'
