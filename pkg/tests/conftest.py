import numpy as np
import pytest

from rmsub import construct, project


@pytest.fixture(scope="session")
def search_64_14():
    """Exhaustive (64,14) encoder search with the 15-subspace objective."""
    return construct.encoder_search(6, 2, 14, objective="min-L-subset", q0=15)


@pytest.fixture(scope="session")
def gmin(search_64_14):
    """(64,14) generator minimizing L over all 63 projections."""
    return search_64_14.spec_at(search_64_14.argmin_full)


@pytest.fixture(scope="session")
def g15(search_64_14):
    """(64,14) generator minimizing the best-15-subspace score."""
    return search_64_14.spec_at(search_64_14.argmin_subset)


@pytest.fixture(scope="session")
def gmin_tree(gmin):
    return project.build_projection_tree(gmin, "full")


@pytest.fixture(scope="session")
def g15_tree(g15):
    return project.build_projection_tree(g15, "full")


@pytest.fixture(scope="session")
def small_spec():
    """A (16, 9) subcode of RM(4, 2) used by the fast decoder tests."""
    return construct.subcode_generator(4, 2, 9, [0, 1, 3, 5])


@pytest.fixture(scope="session")
def small_tree(small_spec):
    return project.build_projection_tree(small_spec, "full")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
