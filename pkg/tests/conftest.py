"""Shared fixtures: catalog systems, unit-horizon instances and small plans"""

import numpy as np
import pytest

from app.core.param_derivation import DiscretizationPlan
from app.core.sphere_net import build_sigma_net
from app.core.system_model import ProblemInstance, catalog_system


@pytest.fixture
def integrator():
    return catalog_system("integrator")


@pytest.fixture
def affine():
    return catalog_system("affine")


@pytest.fixture
def rotator():
    return catalog_system("rotator")


@pytest.fixture
def saturating():
    return catalog_system("saturating")


@pytest.fixture
def unit_instance():
    """t in [0, 1], x0 = 0, p = 2, r = 1"""
    return ProblemInstance(t0=0.0, theta=1.0, x0=np.array([0.0]), p=2.0, r=1.0)


@pytest.fixture
def planar_instance():
    return ProblemInstance(t0=0.0, theta=1.0, x0=np.array([0.5, -0.25]), p=2.0, r=1.0)


@pytest.fixture
def nine_word_plan(unit_instance):
    """N = 2, magnitudes {0, 1, 2}, Delta = 0.5: nine canonical words on S^0"""
    return DiscretizationPlan.direct(unit_instance, beta=2.0, N=2, q=2, sigma=1.0)


@pytest.fixture
def line_net():
    return build_sigma_net(1, 1.0)
