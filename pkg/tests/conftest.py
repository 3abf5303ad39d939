import numpy as np
import pytest

from tomopet import ScannerConfig, build_scanner, build_system_matrix, \
    make_synthetic_phantom

from small_scanner_params import SMALL_BASE


@pytest.fixture(scope="session")
def small_config():
    return ScannerConfig(**SMALL_BASE)


@pytest.fixture(scope="session")
def small_scanner(small_config):
    return build_scanner(small_config)


@pytest.fixture(scope="session")
def full_ring_scanner():
    return build_scanner(ScannerConfig(active_sectors=(True,) * 20, **SMALL_BASE))


@pytest.fixture(scope="session")
def disk_map():
    return make_synthetic_phantom("disk", 32, 32, 1.2, radius=14.0, amplitude=1.0)


@pytest.fixture(scope="session")
def small_matrix(small_scanner):
    return build_system_matrix(small_scanner, 32, 32, 1.2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
