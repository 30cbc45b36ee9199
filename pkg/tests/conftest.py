import numpy as np
import pytest
from hypothesis import settings

from ppkcal.kernels import KernelSpec
from ppkcal.surrogate import builtin_benchmark, uniform_quadrature

settings.register_profile("ppkcal", max_examples=30, deadline=None)
settings.load_profile("ppkcal")


@pytest.fixture(scope="session")
def sine():
    return builtin_benchmark("sine")


@pytest.fixture(scope="session")
def park():
    return builtin_benchmark("park")


@pytest.fixture(scope="session")
def sine_kernel():
    return KernelSpec(0.5, 0.5)


@pytest.fixture(scope="session")
def sine_quad(sine):
    return uniform_quadrature(sine.design_domain, 2000, 0)


@pytest.fixture(scope="session")
def sine_data100(sine):
    return sine.simulate(100, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
