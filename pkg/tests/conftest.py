import numpy as np
import pytest

from wpiot.energy import attach_pmfs
from wpiot.network import EHClass, NetworkParams, dbm_to_w, partition_classes


@pytest.fixture(scope="session")
def base_params():
    return NetworkParams()


@pytest.fixture(scope="session")
def small_params():
    """Coarse battery, few classes: chains of a few hundred states.

    Strong downlink and a small battery so that harvest pmfs are spread over
    many levels and depletion costs range from 1 unit to beyond capacity.
    """
    return NetworkParams(L=60, N=8, p_bs=dbm_to_w(40.0), B=1.15e-8, rho=dbm_to_w(-100.0))


@pytest.fixture(scope="session")
def small_classes(small_params):
    return attach_pmfs(partition_classes(small_params), small_params)


def make_class(pmf, d, n=1, r=10.0):
    """Synthetic EH-class with a given harvest pmf and depletion cost."""
    pmf = np.asarray(pmf, dtype=float)
    L = len(pmf) - 1
    return EHClass(n=n, r_lo=0.0, r_hi=np.inf, r_n=r, p_t_energy=float(d),
                   d_n=int(d), L=L, harvest_pmf=pmf)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
