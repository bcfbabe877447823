import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import factor, problem
from lorasp import solve
from lorasp.solve import BACKEND, apply_inverse, as_linear_operator, get_backend

BACKENDS = ["python"] + (["compiled"] if BACKEND == "compiled" else [])
TEXT = "poisson2d:k=24"


@pytest.mark.parametrize("backend", BACKENDS)
def test_linearity(backend, rng):
    f = factor(TEXT, 0.3)
    b1, b2 = rng.standard_normal((2, f.n))
    lhs = apply_inverse(f, 2.0 * b1 - 3.0 * b2, backend)
    rhs = 2.0 * apply_inverse(f, b1, backend) - 3.0 * apply_inverse(f, b2, backend)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


@pytest.mark.parametrize("backend", BACKENDS)
def test_symmetry(backend, rng):
    f = factor(TEXT, 0.3, "gc-constant")
    u, v = rng.standard_normal((2, f.n))
    a = u @ apply_inverse(f, v, backend)
    b = v @ apply_inverse(f, u, backend)
    assert abs(a - b) <= 1e-12 * abs(a)


@pytest.mark.parametrize("backend", BACKENDS)
def test_deterministic(backend, rng):
    f = factor(TEXT, 0.1)
    b = rng.standard_normal(f.n)
    assert np.array_equal(apply_inverse(f, b, backend), apply_inverse(f, b, backend))


@pytest.mark.parametrize("backend", BACKENDS)
def test_positive_definite(backend, rng):
    f = factor(TEXT, 0.3)
    for _ in range(5):
        v = rng.standard_normal(f.n)
        assert v @ apply_inverse(f, v, backend) > 0


def test_zero_rhs():
    f = factor(TEXT, 0.1)
    assert not apply_inverse(f, np.zeros(f.n)).any()


def test_block_rhs_matches_columns(rng):
    f = factor(TEXT, 0.1)
    B = rng.standard_normal((f.n, 3))
    X = apply_inverse(f, B)
    for j in range(3):
        assert np.allclose(X[:, j], apply_inverse(f, B[:, j]), rtol=1e-13, atol=1e-14)


def test_dimension_mismatch():
    f = factor(TEXT, 0.1)
    with pytest.raises(ValueError):
        apply_inverse(f, np.ones(f.n + 1))


@pytest.mark.skipif(BACKEND != "compiled", reason="compiled extension not built")
@pytest.mark.parametrize("mode", ["lorasp", "gc-constant"])
def test_backends_agree(mode, rng):
    f = factor("poisson2d:k=48", 0.1, mode)
    B = rng.standard_normal((f.n, 2))
    a = apply_inverse(f, B, "compiled")
    b = apply_inverse(f, B, "python")
    assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(b)


def test_get_backend():
    assert get_backend("python") is solve._sweep
    with pytest.raises(ValueError):
        get_backend("fortran")


def test_env_var_selects_fallback():
    env = dict(os.environ, LORASP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import lorasp; print(lorasp.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_linear_operator_columns():
    f = factor("poisson2d:k=8", 0.1)
    op = as_linear_operator(f)
    H = op @ np.eye(f.n)
    for j in (0, 17, f.n - 1):
        e = np.zeros(f.n)
        e[j] = 1.0
        assert np.allclose(op.matvec(e), H[:, j], rtol=1e-13, atol=1e-15)
    assert op.shape == (f.n, f.n)


def test_exact_factorization_inverts(rng):
    p = problem("poisson2d:k=12")
    f = factor("poisson2d:k=12", 0.0)
    x = rng.standard_normal(p.n)
    assert np.linalg.norm(apply_inverse(f, p.A @ x) - x) <= 1e-10 * np.linalg.norm(x)
