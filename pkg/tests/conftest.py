import os
import sys

import pytest

# Add the project root to the Python path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from app.main import create_app
from app.schemas import ClockModel, FoMode, SceneConfig, StaticScatterer, ToMode


def quiet_clock(**kwargs) -> ClockModel:
    """A receiver clock with no timing or frequency offset unless told otherwise."""
    return ClockModel(**{'to_mode': ToMode.ZERO, 'fo_mode': FoMode.ZERO, **kwargs})


def make_scene(**overrides) -> SceneConfig:
    """TX at the origin, one RX 4 m away on +x, noiseless and synchronized."""
    data = {
        'tx_position': (0.0, 0.0),
        'rx_positions': [(4.0, 0.0)],
        'duration': 0.01,
        'clock_models': [quiet_clock()],
        'noise_floor': 0.0,
    }
    data.update(overrides)
    return SceneConfig(**data)


@pytest.fixture
def app():
    """Create a Flask app for testing."""
    app = create_app()
    app.config['TESTING'] = True
    yield app


@pytest.fixture
def client(app):
    """Create a test client."""
    return app.test_client()


@pytest.fixture
def scene():
    """Plain scene with a single static scatterer at (2, 1.5)."""
    return make_scene(static_scatterers=[StaticScatterer(position=(2.0, 1.5), amplitude=0.3, label='post')])
