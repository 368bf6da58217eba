import numpy as np
import pytest

from emitterlab.matter_model import CutoffProfile, build_model, default_model, two_level_model


def collinear_model():
    """Three levels with every dipole along z, so coherences couple at order g^2."""
    return build_model(
        [(0.0, 1), (1.0, 1), (1.5, 1)],
        {(0, 1): (0, 0, 0.8), (0, 2): (0, 0, 0.5), (1, 2): (0, 0, 0.3)},
        CutoffProfile(order=1, scale=2.0),
    )


def degenerate_model(seed=3):
    """Ground level plus a threefold and a twofold excited level with random couplings."""
    rng = np.random.default_rng(seed)
    c01 = 0.5 * (rng.standard_normal((1, 3, 3)) + 1j * rng.standard_normal((1, 3, 3)))
    c02 = 0.5 * rng.standard_normal((1, 2, 3))
    c12 = 0.5 * rng.standard_normal((3, 2, 3))
    return build_model([(0.0, 1), (1.0, 3), (1.6, 2)], {(0, 1): c01, (0, 2): c02, (1, 2): c12}, CutoffProfile(1, 2.0))


def random_block(rng, dims, hermitian=False, psd=False):
    from emitterlab.generator import BlockOperator

    blocks = []
    for d in dims:
        a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        if psd:
            a = a @ a.conj().T
        elif hermitian:
            a = 0.5 * (a + a.conj().T)
        blocks.append(a)
    return BlockOperator(blocks)


@pytest.fixture(scope="session")
def two_level():
    return two_level_model()


@pytest.fixture(scope="session")
def three_level():
    return default_model()


@pytest.fixture(scope="session")
def collinear():
    return collinear_model()


@pytest.fixture(scope="session")
def degenerate():
    return degenerate_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
