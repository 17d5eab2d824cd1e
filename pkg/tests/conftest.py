import pytest  # type: ignore

from tinypose.config import NoiseSettings, RenderSettings
from tinypose.meshes import make_box, make_prism
from tinypose.render import CameraIntrinsics
from tinypose.scenegen import SceneSpec, generate_scene, simulate_predictions
from tinypose.storages import JSONStorage


@pytest.fixture
def storage(tmp_path):
    with JSONStorage(tmp_path / 'document.json') as storage:
        yield storage


@pytest.fixture(scope='session')
def cube():
    return make_box((0.05, 0.05, 0.05), class_id=1, name='cube')


@pytest.fixture(scope='session')
def box():
    return make_box((0.06, 0.04, 0.03), class_id=1, name='box')


@pytest.fixture(scope='session')
def prism():
    return make_prism(6, 0.03, 0.04, class_id=2, name='hexagon')


@pytest.fixture(scope='session')
def camera():
    return CameraIntrinsics()


@pytest.fixture(scope='session')
def packed_scene(cube):
    spec = SceneSpec([cube], {1: 4}, 'packed', seed=3)
    return generate_scene(spec)


@pytest.fixture(scope='session')
def packed_maps(packed_scene):
    return simulate_predictions(packed_scene, NoiseSettings.noiseless())


@pytest.fixture(scope='session')
def flat_render():
    """
    Render settings whose boundaries are mask borders only.
    """
    return RenderSettings(self_occlusion=False)
