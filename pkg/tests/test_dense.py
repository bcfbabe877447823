import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorasp.dense import (PROJECTIONS, CholeskyFactor, orthonormalize, preserving_compress,
                          project_one_sided, project_symmetric_first, project_symmetric_second,
                          spd_factor, spd_solve, truncated_svd)
from lorasp.errors import NotSPDError


def _orth_err(U):
    return np.abs(U.T @ U - np.eye(U.shape[1])).max() if U.size else 0.0


def test_truncated_svd_zero_matrix():
    f = truncated_svd(np.zeros((5, 7)), 0.1)
    assert f.rank == 0 and f.err == 0.0 and f.Rt.shape == (0, 7)


def test_truncated_svd_empty():
    assert truncated_svd(np.zeros((0, 3)), 0.1).rank == 0


def test_truncated_svd_rank_one(rng):
    u, v = rng.standard_normal(6), rng.standard_normal(9)
    M = np.outer(u, v)
    f = truncated_svd(M, 0.1)
    assert f.rank == 1
    assert np.linalg.norm(M - f.dense(), 2) <= 1e-12 * np.linalg.norm(M, 2)


def test_truncated_svd_gaussian_against_full_svd(rng):
    M = rng.standard_normal((20, 30))
    f = truncated_svd(M, 0.3)
    s = np.linalg.svd(M, compute_uv=False)
    k = int(np.count_nonzero(s > 0.3 * s[0]))
    assert f.rank == k
    err = np.linalg.norm(M - f.U @ f.Rt, 2)
    assert err <= 0.3 * s[0]
    assert abs(err - f.err) <= 1e-10 * s[0]
    assert _orth_err(f.U) <= 1e-12
    # Rt = Sigma V^T
    assert np.allclose(f.Rt @ f.Rt.T, np.diag(s[:k] ** 2))


def test_truncated_svd_eps_zero_full_numerical_rank(rng):
    M = rng.standard_normal((8, 3)) @ rng.standard_normal((3, 10))
    f = truncated_svd(M, 0.0)
    assert f.rank == 3
    assert np.linalg.norm(M - f.dense()) <= 1e-12 * np.linalg.norm(M)


def test_truncated_svd_absolute_fro(rng):
    M = rng.standard_normal((10, 12))
    f = truncated_svd(M, 1.5, mode="absolute-fro")
    assert np.linalg.norm(M - f.dense()) <= 1.5
    g = truncated_svd(M, 1.5, mode="absolute-fro")
    assert g.rank == f.rank
    with pytest.raises(ValueError):
        truncated_svd(M, -1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), eps=st.floats(0.01, 0.9))
def test_truncated_svd_idempotent(seed, eps):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((12, 15)) * np.logspace(0, -4, 15)
    f = truncated_svd(M, eps)
    g = truncated_svd(f.dense(), eps)
    assert g.rank == f.rank
    assert g.err <= f.err + 1e-12


def test_orthonormalize_drops_dependent_columns(rng):
    a = rng.standard_normal(6)
    Q = orthonormalize(np.column_stack([a, 2 * a, np.zeros(6), rng.standard_normal(6)]))
    assert Q.shape == (6, 2)
    assert _orth_err(Q) <= 1e-12


def test_preserving_compress_contains_phi_x(rng):
    A = rng.standard_normal((10, 14))
    e1 = np.eye(10)[:, 0]
    f = preserving_compress(A, e1, None, 1.0)
    assert np.linalg.norm(f.U @ (f.U.T @ e1) - e1) <= 1e-14
    # A w lies in span(U) when w is a preserved direction
    w = rng.standard_normal(14)
    g = preserving_compress(A, None, A @ w, 1.0)
    assert np.linalg.norm(g.U @ (g.Rt @ w) - A @ w) <= 1e-12 * np.linalg.norm(A @ w)


def test_preserving_compress_empty_set_is_svd(rng):
    A = rng.standard_normal((9, 11))
    f = preserving_compress(A, None, None, 0.2)
    g = truncated_svd(A, 0.2)
    assert f.rank == g.rank and np.allclose(f.dense(), g.dense())


def test_preserving_compress_random_instance():
    rng = np.random.default_rng(7)
    B = rng.standard_normal((16, 24))
    phi_x, phi_y = rng.standard_normal(16), rng.standard_normal(24)
    f = preserving_compress(B, phi_x, B @ phi_y, 0.2)
    Bt = f.dense()
    nB = np.linalg.norm(B, 2)
    assert np.linalg.norm(Bt @ phi_y - B @ phi_y) <= 1e-10 * nB * np.linalg.norm(phi_y)
    assert np.linalg.norm(Bt.T @ phi_x - B.T @ phi_x) <= 1e-10 * nB * np.linalg.norm(phi_x)
    assert np.linalg.norm(B - Bt, 2) <= 0.2 * nB
    assert _orth_err(f.U) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000), eps=st.sampled_from([0.0, 0.05, 0.1, 0.3]),
       p=st.integers(1, 3))
def test_preserving_compress_contract(seed, eps, p):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(p + 1, 20), rng.integers(1, 25)
    A = rng.standard_normal((m, n)) * np.logspace(0, -6, n)
    phi_x, phi_y = rng.standard_normal((m, p)), rng.standard_normal((n, p))
    f = preserving_compress(A, phi_x, A @ phi_y, eps)
    nA = np.linalg.norm(A, 2)
    assert _orth_err(f.U) <= 1e-12
    assert np.linalg.norm(A - f.dense(), 2) <= eps * nA + 1e-12 * nA
    assert np.linalg.norm(f.dense() @ phi_y - A @ phi_y) <= 1e-10 * nA * np.linalg.norm(phi_y)
    assert np.linalg.norm(f.U @ (f.U.T @ phi_x) - phi_x) <= 1e-10 * np.linalg.norm(phi_x)


def test_spd_solve_examples(rng):
    F = spd_factor(np.eye(3))
    b = rng.standard_normal(3)
    assert np.allclose(spd_solve(F, b), b)
    x = spd_solve(spd_factor(np.array([[2.0, 1.0], [1.0, 2.0]])), np.array([1.0, 0.0]))
    assert np.allclose(x, [2 / 3, -1 / 3], atol=1e-15)
    G = rng.standard_normal((8, 8))
    M = G @ G.T + 8 * np.eye(8)
    b = rng.standard_normal(8)
    assert np.linalg.norm(M @ spd_solve(spd_factor(M), b) - b) <= 1e-10
    assert spd_solve(CholeskyFactor(np.zeros((0, 0))), np.zeros(0)).size == 0


def test_spd_factor_names_node():
    with pytest.raises(NotSPDError) as info:
        spd_factor(np.array([[1.0, 2.0], [2.0, 1.0]]), where="level 3, super node 5")
    assert info.value.where == "level 3, super node 5"
    assert "level 3" in str(info.value)


# ---------------------------------------------------------------------------
# two-stage projections


@pytest.mark.parametrize("scheme", sorted(PROJECTIONS))
def test_projection_without_preserved_vectors_is_svd(scheme, rng):
    B = rng.standard_normal((12, 18))
    res = PROJECTIONS[scheme](B, None, None, 0.05, 0.3)
    ref = truncated_svd(B.T, 0.3)
    assert np.allclose(res.Bt_approx, ref.dense())


@pytest.mark.parametrize("scheme", sorted(PROJECTIONS))
def test_projection_eps_zero_is_exact(scheme, rng):
    B = rng.standard_normal((12, 18))
    res = PROJECTIONS[scheme](B, rng.standard_normal((18, 2)), rng.standard_normal((12, 2)),
                              0.0, 0.0)
    assert np.linalg.norm(res.Bt_approx - B.T) <= 1e-12 * np.linalg.norm(B)


def test_one_sided_random_instance():
    rng = np.random.default_rng(3)
    B = rng.standard_normal((12, 18))
    res = project_one_sided(B, rng.standard_normal((18, 2)), rng.standard_normal((12, 2)),
                            0.05, 0.3)
    assert all(v >= 0 for v in res.slack.values())
    assert set(res.bounds) == {"B", "Xs", "Xw"}


def test_eps1_must_not_exceed_eps2(rng):
    with pytest.raises(ValueError):
        project_one_sided(rng.standard_normal((3, 3)), None, None, 0.5, 0.1)


def _instance(seed):
    rng = np.random.default_rng(seed)
    nw, ns = rng.integers(4, 20, size=2)
    B = rng.standard_normal((nw, ns)) * np.logspace(0, -3, ns)
    ks, kw = rng.integers(1, 4, size=2)
    return B, rng.standard_normal((ns, ks)), rng.standard_normal((nw, kw))


@pytest.mark.parametrize("scheme", sorted(PROJECTIONS))
def test_projection_bounds_100_instances(scheme):
    fn = PROJECTIONS[scheme]
    for seed in range(100):
        B, X_s, X_w = _instance(seed)
        res = fn(B, X_s, X_w, 0.05, 0.3)
        for name, slack in res.slack.items():
            assert slack >= 0, (scheme, seed, name, res.bounds[name])


def test_second_order_eigen_direction_bound():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(6, 16))
        G = rng.standard_normal((n, n))
        lam, E = np.linalg.eigh(G @ G.T + np.eye(n))
        B = rng.standard_normal((int(rng.integers(4, 16)), n))
        X_s = E[:, :2] / lam[:2]
        res = project_symmetric_second(B, X_s, rng.standard_normal((B.shape[0], 1)), 0.05, 0.3,
                                       eigenvalues=lam[:2])
        assert {"e0", "e1"} <= set(res.bounds)
        assert min(res.slack.values()) >= 0


def test_symmetric_first_min_bound(rng):
    B = rng.standard_normal((10, 14))
    res = project_symmetric_first(B, rng.standard_normal((14, 2)), rng.standard_normal((10, 2)),
                                  0.05, 0.3)
    m, b = res.bounds["Xw"]
    assert m <= b
    f = res.factor()
    assert np.allclose(f.dense(), res.Bt_approx)
