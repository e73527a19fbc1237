import pytest

from cellforge.datagen import default_world


@pytest.fixture(scope="session")
def world():
    return default_world()
