import numpy as np
import pytest
import scipy.sparse as sp

from celluster import model
from celluster import numerics as nm
from celluster.cellgraph import _from_adjacency


def _random_graph(rng, n, p=0.4, kind="sym_normalized"):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    adj = (upper | upper.T).astype(float)
    return _from_adjacency(sp.csr_matrix(adj), kind)


def _layer(rng, in_dim, out_dim, order):
    return model.ChebLayerParams(
        theta=[
            nm.Tensor(rng.normal(size=(in_dim, out_dim)), requires_grad=True)
            for _ in range(order)
        ],
        bias=nm.Tensor(np.zeros(out_dim), requires_grad=True),
    )


def _cheb_polynomials(lhat: np.ndarray, order: int) -> list[np.ndarray]:
    """Dense T_0 .. T_{order-1} built explicitly from the recurrence."""
    n = lhat.shape[0]
    polys = [np.eye(n)]
    if order >= 2:
        polys.append(lhat.copy())
    for _ in range(2, order):
        polys.append(2.0 * lhat @ polys[-1] - polys[-2])
    return polys[:order]


def test_chebconv_order_one_ignores_the_graph():
    rng = np.random.default_rng(0)
    graph = _random_graph(rng, 6)
    x = rng.normal(size=(6, 4))
    layer = _layer(rng, 4, 3, order=1)
    out = model.chebconv_forward(nm.Tensor(x), graph, layer)
    np.testing.assert_allclose(out.values, x @ layer.theta[0].values, atol=1e-14)


def test_chebconv_zero_operator_reduces_to_first_term():
    rng = np.random.default_rng(1)
    graph = _from_adjacency(sp.csr_matrix((5, 5)), "sym_normalized")  # Lhat = 0
    x = rng.normal(size=(5, 4))
    layer = _layer(rng, 4, 2, order=2)
    out = model.chebconv_forward(nm.Tensor(x), graph, layer)
    np.testing.assert_allclose(out.values, x @ layer.theta[0].values, atol=1e-14)


@pytest.mark.parametrize("order", [1, 2, 3, 4, 5])
def test_chebconv_matches_dense_polynomial_oracle(order):
    # recursive forward vs explicitly built Chebyshev polynomials of Lhat
    for seed in range(10):
        rng = np.random.default_rng(100 * order + seed)
        n = int(rng.integers(3, 17))
        graph = _random_graph(rng, n, kind=["sym_normalized", "combinatorial"][seed % 2])
        x = rng.normal(size=(n, 5))
        layer = _layer(rng, 5, 3, order=order)
        out = model.chebconv_forward(nm.Tensor(x), graph, layer)
        lhat = graph.scaled_laplacian.toarray()
        expected = sum(
            poly @ x @ theta.values
            for poly, theta in zip(_cheb_polynomials(lhat, order), layer.theta)
        )
        assert np.max(np.abs(out.values - expected)) < 1e-10


def test_chebconv_shape_mismatch():
    rng = np.random.default_rng(2)
    graph = _random_graph(rng, 6)
    layer = _layer(rng, 4, 3, order=2)
    with pytest.raises(nm.ShapeMismatchError):
        model.chebconv_forward(nm.Tensor(np.zeros((5, 4))), graph, layer)
    with pytest.raises(nm.ShapeMismatchError):
        model.chebconv_forward(nm.Tensor(np.zeros((6, 7))), graph, layer)


def test_encode_zero_input_zero_bias_gives_zero_embedding():
    rng = np.random.default_rng(3)
    graph = _random_graph(rng, 8)
    params = model.init_params(n_genes=10, latent_dim=4, hidden_dim=6, seed=0)
    z = model.encode(np.zeros((8, 10)), graph, params)
    np.testing.assert_array_equal(z.values, np.zeros((8, 4)))


def test_encode_is_deterministic():
    rng = np.random.default_rng(4)
    graph = _random_graph(rng, 8)
    params = model.init_params(n_genes=10, latent_dim=4, hidden_dim=6, seed=1)
    x = rng.normal(size=(8, 10))
    za = model.encode(x, graph, params)
    zb = model.encode(x, graph, params)
    assert np.array_equal(za.values, zb.values)


def test_full_forward_is_node_permutation_equivariant():
    rng = np.random.default_rng(5)
    n = 9
    graph = _random_graph(rng, n)
    params = model.init_params(n_genes=7, latent_dim=3, hidden_dim=5, seed=2)
    x = rng.normal(size=(n, 7))
    perm = rng.permutation(n)

    adj_p = graph.adjacency.toarray()[np.ix_(perm, perm)]
    graph_p = _from_adjacency(sp.csr_matrix(adj_p), graph.laplacian_kind)

    z = model.encode(x, graph, params)
    z_p = model.encode(x[perm], graph_p, params)
    np.testing.assert_allclose(z_p.values, z.values[perm], atol=1e-9)

    a_rec = model.decode_adjacency(z).values
    a_rec_p = model.decode_adjacency(z_p).values
    np.testing.assert_allclose(a_rec_p, a_rec[np.ix_(perm, perm)], atol=1e-9)

    zinb = model.decode_zinb(z, params)
    zinb_p = model.decode_zinb(z_p, params)
    np.testing.assert_allclose(zinb_p.mu.values, zinb.mu.values[perm], atol=1e-9)


def test_decode_adjacency_orthogonal_rows_give_half():
    z = nm.Tensor(np.eye(3))
    a_rec = model.decode_adjacency(z).values
    off_diag = a_rec[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off_diag, 0.5, atol=1e-15)


def test_decode_adjacency_identical_rows_match_diagonal():
    z = nm.Tensor(np.array([[1.0, 2.0], [1.0, 2.0], [0.5, -1.0]]))
    a_rec = model.decode_adjacency(z).values
    assert a_rec[0, 1] == a_rec[0, 0] == a_rec[1, 1]
    np.testing.assert_allclose(a_rec, a_rec.T, atol=0)


def test_decode_adjacency_unit_norm_single_cell():
    a_rec = model.decode_adjacency(nm.Tensor([[1.0]])).values
    assert a_rec[0, 0] == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), abs=1e-12)
    assert a_rec[0, 0] == pytest.approx(0.7311, abs=5e-5)


def test_decode_zinb_all_zero_weights():
    params = model.init_params(n_genes=6, latent_dim=4, seed=0)
    for _, t in params.named_parameters():
        t.values = np.zeros_like(t.values)
    zinb = model.decode_zinb(nm.Tensor(np.random.default_rng(0).normal(size=(3, 4))), params)
    np.testing.assert_allclose(zinb.pi.values, 0.5, atol=0)
    np.testing.assert_allclose(zinb.mu.values, 1.0, atol=0)
    np.testing.assert_allclose(zinb.theta.values, 1.0, atol=0)


def test_decode_zinb_ranges_hold_for_random_weights():
    rng = np.random.default_rng(6)
    for seed in range(20):
        params = model.init_params(n_genes=5, latent_dim=3, hidden_dim=4, seed=seed)
        for _, t in params.named_parameters():
            t.values = rng.uniform(-1.0, 1.0, size=t.values.shape)
        z = nm.Tensor(rng.uniform(-5, 5, size=(4, 3)))
        zinb = model.decode_zinb(z, params)
        assert np.all(zinb.pi.values > 0) and np.all(zinb.pi.values < 1)
        assert np.all(zinb.mu.values > 0) and np.all(np.isfinite(zinb.mu.values))
        assert np.all(zinb.theta.values > 0) and np.all(np.isfinite(zinb.theta.values))


def test_decode_zinb_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    params = model.init_params(n_genes=4, latent_dim=3, hidden_dim=3, zinb_dims=(4, 5, 6), seed=3)
    z0 = rng.normal(size=(3, 3)) * 0.5
    w = rng.normal(size=(3, 4))

    for head in ("pi", "mu", "theta"):

        def forward(arrays):
            zinb = model.decode_zinb(nm.Tensor(arrays[0]), params)
            return float((getattr(zinb, head).values * w).sum())

        z = nm.Tensor(z0, requires_grad=True)
        zinb = model.decode_zinb(z, params)
        (getattr(zinb, head) * nm.Tensor(w)).sum().backward()
        numeric = nm.finite_difference_gradients(forward, [z0])
        err = nm.max_relative_error([z.grad], numeric)
        assert err < 1e-5, f"{head} head: max relative error {err}"


def test_soft_assign_equidistant_centers():
    z = nm.Tensor(np.array([[0.0, 0.0]]))
    centers = nm.Tensor(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    q = model.soft_assign(z, centers).values
    np.testing.assert_allclose(q, [[0.5, 0.5]], atol=1e-15)


def test_soft_assign_on_center_versus_unit_away():
    # distance 0 to the first center, squared distance 1 to the second:
    # kernel (1, 1/2) -> q = (2/3, 1/3)
    z = nm.Tensor(np.array([[0.0, 0.0]]))
    centers = nm.Tensor(np.array([[0.0, 0.0], [1.0, 0.0]]))
    q = model.soft_assign(z, centers).values
    np.testing.assert_allclose(q, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-12)


def test_soft_assign_rows_sum_to_one():
    rng = np.random.default_rng(8)
    z = nm.Tensor(rng.normal(size=(20, 5)) * 3)
    centers = nm.Tensor(rng.normal(size=(4, 5)))
    q = model.soft_assign(z, centers).values
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(q > 0) and np.all(q < 1)


def test_named_parameters_are_stable_and_complete():
    params = model.init_params(n_genes=5, latent_dim=3, hidden_dim=4, seed=0)
    names = [n for n, _ in params.named_parameters()]
    assert names[0] == "enc0.theta0"
    assert "head_mu.weight" in names
    assert "cluster_centers" not in names
    with_centers = params.with_centers(np.zeros((2, 3)))
    assert [n for n, _ in with_centers.named_parameters()][-1] == "cluster_centers"
