import functools

import numpy as np
import pytest
import scipy.sparse as sp

from lorasp import SolverConfig, SparseSymMatrix, factorize
from lorasp.problems import load_problem


# criterion number -> one-line verdict, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


@functools.lru_cache(maxsize=None)
def problem(text):
    return load_problem(text)


@functools.lru_cache(maxsize=None)
def factor(text, eps=0.1, mode="lorasp", **kw):
    p = problem(text)
    preserve = p.eigenvector() if mode == "gc-eigenvector" else None
    cfg = SolverConfig(eps=eps, mode=mode, **kw)
    return factorize(p.A, cfg=cfg, preserve=preserve, coords=p.coords)


def laplacian_1d(n):
    T = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    return SparseSymMatrix.from_scipy(T)


def random_spd(n, seed=0, density=0.15):
    rng = np.random.default_rng(seed)
    M = sp.random(n, n, density=density, random_state=rng)
    M = M + M.T
    d = np.abs(M).sum(axis=1).A1 + 1.0
    return SparseSymMatrix.from_scipy(M + sp.diags(d))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
