import numpy as np
import pytest

from edgeaudio import runtime
from edgeaudio.tensor.calibrate import quantize_graph


@pytest.fixture(scope="session")
def float_models():
    return {arch: runtime.build_initialized(arch, seed=0, init_samples=16) for arch in ("kws", "emotion")}


@pytest.fixture(scope="session")
def calib_inputs():
    return {arch: runtime.synthetic_inputs(arch, 24, seed=0) for arch in ("kws", "emotion")}


@pytest.fixture(scope="session")
def quant_models(float_models, calib_inputs):
    return {arch: quantize_graph(g, calib_inputs[arch]) for arch, g in float_models.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
