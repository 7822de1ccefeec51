import numpy as np
import pytest

from gnfalign import shape_model
from gnfalign.harness import synth


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def face_pdm():
    """Planted 68-point PDM with 4 deformation modes."""
    return synth.planted_pdm(68, 4)


@pytest.fixture(scope="session")
def small_dataset():
    """20 synthetic examples, shared by the slower harness/CLI tests."""
    return synth.synth_examples(synth.SynthConfig(count=20), seed=42)


def random_params(pdm, rng, scale=(40.0, 70.0), rot=0.3, trans=(80.0, 120.0), g_sigma=0.1):
    """Moderate random parameter vectors for a given PDM."""
    p = shape_model.identity_params(pdm.n_modes)
    p[shape_model.ALPHA_X] = rng.uniform(*scale)
    p[shape_model.ALPHA_Y] = rng.uniform(*scale)
    p[shape_model.GAMMA] = rng.uniform(-rot, rot)
    p[shape_model.T_X] = rng.uniform(*trans)
    p[shape_model.T_Y] = rng.uniform(*trans)
    p[shape_model.N_RIGID :] = rng.normal(0.0, g_sigma, size=pdm.n_modes)
    return p
