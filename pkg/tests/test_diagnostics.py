import functools
import json

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import factor, laplacian_1d, problem
from lorasp import SolverConfig, SparseSymMatrix, factorize
from lorasp.diagnostics import (approximate_operator, diagnostics_report, eigen_bound_report,
                                error_bound_report, extended_factorization, extension_defect,
                                factorization_error, materialize_solve_operator,
                                preconditioned_condition_number, preservation_residual,
                                report_json, single_step_extension,
                                verify_equivalent_extension)
from lorasp.errors import UnsupportedError


@functools.lru_cache(maxsize=None)
def _kappa(text, eps, mode):
    return preconditioned_condition_number(factor(text, eps, mode), problem(text).A)["kappa"]


def test_exact_operator_is_A():
    p = problem("poisson2d:k=16")
    AH = approximate_operator(factor("poisson2d:k=16", 0.0))
    A = p.A.toarray()
    assert np.linalg.norm(AH - A) <= 1e-9 * np.linalg.norm(A)
    err = factorization_error(factor("poisson2d:k=16", 0.0), p.A, AH)
    assert err["rel_fro"] <= 1e-9


def test_identity_matrix():
    A = SparseSymMatrix.from_scipy(sp.identity(40, format="csr"))
    f = factorize(A, cfg=SolverConfig(eps=0.3, leaf_size=4))
    assert np.allclose(approximate_operator(f), np.eye(40), atol=1e-13)


@pytest.mark.parametrize("mode", ["lorasp", "gc-constant"])
def test_kappa_exact_is_one(mode):
    assert abs(_kappa("poisson2d:k=16", 0.0, mode) - 1.0) <= 1e-8


@pytest.mark.parametrize("eps", [0.1, 0.3])
def test_kappa_at_least_one(eps):
    assert _kappa("poisson2d:k=16", eps, "lorasp") >= 1 - 1e-8


def test_gc_operator_reproduces_A_phi():
    p = problem("poisson2d:k=16")
    f = factor("poisson2d:k=16", 0.3, "gc-constant")
    one = np.ones(p.n)
    AH = approximate_operator(f)
    assert np.linalg.norm(AH @ one - p.A @ one) <= 1e-9 * np.linalg.norm(p.A @ one)
    assert preservation_residual(f, p.A, one) <= 1e-9


def test_error_monotone_in_eps():
    p = problem("poisson2d:k=32")
    e1 = factorization_error(factor("poisson2d:k=32", 0.1), p.A)["abs_fro"]
    e3 = factorization_error(factor("poisson2d:k=32", 0.3), p.A)["abs_fro"]
    assert e3 >= e1 > 0


def test_kappa_trend():
    texts = ["poisson2d:k=16", "poisson2d:k=32", "poisson2d:k=64"]
    lor = [_kappa(t, 0.1, "lorasp") for t in texts]
    gc = [_kappa(t, 0.1, "gc-constant") for t in texts]
    assert lor[0] < lor[1] < lor[2]
    assert max(gc) <= 2 * gc[0]


def test_kappa_gc_below_lorasp_at_64():
    assert _kappa("poisson2d:k=64", 0.1, "gc-constant") < _kappa("poisson2d:k=64", 0.1, "lorasp")
    assert _kappa("poisson2d:k=32", 0.3, "gc-constant") < _kappa("poisson2d:k=32", 0.3, "lorasp")


@pytest.mark.xfail(strict=True, reason="both are within 2% of 1 at 32^2 and eps=0.1; "
                                       "the bisection gives GC the slightly larger value")
def test_kappa_gc_below_lorasp_at_32():
    assert _kappa("poisson2d:k=32", 0.1, "gc-constant") < _kappa("poisson2d:k=32", 0.1, "lorasp")


def test_indefinite_solve_operator_reported():
    # a mildly indefinite matrix gives an indefinite solve operator at eps=0
    A = laplacian_1d(32).toarray() - 0.1 * np.eye(32)
    f = factorize(laplacian_1d(32), cfg=SolverConfig(eps=0.0))
    Hinv = -materialize_solve_operator(f)
    rep = preconditioned_condition_number(f, A, Hinv)
    assert rep["spd"] is False and rep["kappa"] == float("inf")


def test_size_guard():
    f = factor("poisson2d:k=16", 0.1)
    with pytest.raises(UnsupportedError):
        materialize_solve_operator(f, max_n=100)


def test_extension_identity_1d_n16():
    A = laplacian_1d(16).toarray()
    s, n, w = np.arange(4), np.arange(4, 5), np.arange(5, 16)
    # add a long-range coupling so that A_sw is not zero
    A[0, 10] = A[10, 0] = -0.5
    K, info = single_step_extension(A, s, n, w, eps=0.0)
    assert info["U"].shape[1] == 1
    assert verify_equivalent_extension(A, K)


def test_extension_trivial_without_compression():
    A = laplacian_1d(16).toarray()
    K, info = single_step_extension(A, np.arange(4), np.arange(4, 5), np.arange(5, 16))
    assert info["U"].shape[1] == 0
    assert verify_equivalent_extension(A, K)


def test_extension_defect_tracks_compression_error():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((30, 30))
    A = G @ G.T + 30 * np.eye(30)
    K, info = single_step_extension(A, np.arange(10), np.arange(10, 12), np.arange(12, 30),
                                    eps=0.5)
    defect = extension_defect(A, K) * np.linalg.norm(A)
    assert not verify_equivalent_extension(A, K)
    # the defect is E_sw placed in two off-diagonal blocks
    assert defect == pytest.approx(np.sqrt(2) * info["compress_error"], rel=1e-8)


def test_extended_factorization_schur_is_AH():
    f = factor("poisson2d:k=16", 0.3, "gc-constant")
    K = extended_factorization(f)
    rep = error_bound_report(f, problem("poisson2d:k=16").A, K=K)
    assert rep["schur_consistency"] <= 1e-10
    assert np.abs(K - K.T).max() <= 1e-12 * np.abs(K).max()


@pytest.mark.parametrize("text, eps, kw", [
    ("poisson2d:k=16", 0.1, {}),
    ("poisson2d:k=16", 0.3, {}),
    ("poisson2d:k=32", 0.2, {"tol_mode": "absolute-fro"}),
    ("poisson2d:k=16:coeff=random:seed=1", 0.3, {}),
])
def test_error_bound_holds(text, eps, kw):
    f = factor(text, eps, "lorasp", **kw)
    rep = error_bound_report(f, problem(text).A)
    assert rep["holds"] and rep["slack"] >= 0
    assert rep["measured"] > 0


def test_error_bound_exact():
    rep = error_bound_report(factor("poisson2d:k=16", 0.0), problem("poisson2d:k=16").A)
    assert rep["measured"] <= 1e-9 and rep["extension_error_fro"] <= 1e-9


def test_eigen_bound_report():
    text = "poisson2d:k=16"
    f = factor(text, 0.1, "gc-eigenvector")
    rep = eigen_bound_report(f, problem(text).A)
    kappa = _kappa(text, 0.1, "gc-eigenvector")
    assert rep["two_subspace"]["dim_S1"] == 1
    # the eigenvector is preserved, so the accuracy on S1 is at roundoff level
    assert rep["two_subspace"]["eps1"] <= 1e-10
    b = rep["two_subspace"]["bound"]
    if b is not None:
        assert kappa <= b * (1 + 1e-8)
    u = rep["uniform"]["bound"]
    if u is not None:
        assert kappa <= u * (1 + 1e-8)


def test_diagnostics_report_json():
    text = "poisson2d:k=16"
    p = problem(text)
    rep = diagnostics_report(factor(text, 0.1, "gc-constant"), p.A, np.ones(p.n))
    d = json.loads(report_json(rep))
    assert d["preservation_residual"] <= 1e-9
    assert d["condition"]["spd"] is True
    for key in ("factorization_error", "condition", "bounds"):
        assert key in d
