import numpy as np
import pytest

from spintunnel.model import ModelSpec


@pytest.fixture
def cw():
    """Curie-Weiss model factory."""
    return ModelSpec.curie_weiss


def make_rng(*seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(seed))))


def mean_field_beta_f(m, gamma, h, beta):
    """beta*F(m) for the Curie-Weiss density, typed from the closed form.

    Independent of the model module: beta*(m*g1 - g) - ln(2 cosh(beta*w))
    with g = m^2/2 + h*m, g1 = m + h, w = sqrt(gamma^2 + g1^2).
    """
    g1 = m + h
    g = 0.5 * m * m + h * m
    w = np.sqrt(gamma * gamma + g1 * g1)
    return beta * (m * g1 - g) - np.log(2.0 * np.cosh(beta * w))
