import numpy as np
import pytest
from hypothesis import settings

from escape.model import (
    DoubleExponential,
    Erlang,
    Exponential,
    ExponentialNegative,
    JumpSpec,
    Laplace,
    ProcessModel,
)

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def make(c, arrivals, family=None, atoms=()):
    return ProcessModel(float(c), arrivals, JumpSpec(tuple(atoms), family))


@pytest.fixture
def poisson_exp():
    # c=1, Poisson(1) arrivals, -J ~ Exp(2)
    return make(1.0, Exponential(1.0), ExponentialNegative(2.0))


@pytest.fixture
def erlang_exp():
    return make(1.0, Erlang(2, 1.0), ExponentialNegative(1.0))


@pytest.fixture
def laplace_zero():
    return make(0.0, Exponential(1.0), Laplace(1.0))


def exp_jump_ep(x, b, rho, gamma):
    """(1 - (rho/gamma) e^{(rho-gamma)x}) / (same at b)."""
    x = np.asarray(x, dtype=float)
    r = rho / gamma
    return (1 - r * np.exp((rho - gamma) * x)) / (1 - r * np.exp((rho - gamma) * b))
