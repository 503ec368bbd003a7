import numpy as np
import pytest

from illumdesign.dataset import SceneSpec, default_white_led, synth_scene
from illumdesign.imaging import default_camera
from illumdesign.spectra import default_bank, scotopic


@pytest.fixture(scope="session")
def camera():
    return default_camera()


@pytest.fixture(scope="session")
def bank():
    return default_bank()


@pytest.fixture(scope="session")
def scot():
    return scotopic()


@pytest.fixture(scope="session")
def white(camera):
    return default_white_led(camera)


@pytest.fixture(scope="session")
def small_scenes():
    return [synth_scene(SceneSpec(2, 2, patch_size=6, seed=s)) for s in range(3)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
