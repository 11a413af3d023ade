import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specgraph.graph import (
    Graph,
    SpectralError,
    build_normalized_laplacian,
    decompose,
    eigendecompose,
    graph_fourier_transform,
)

from conftest import random_graph


class TestGraph:
    def test_edges_are_canonicalized(self):
        g = Graph(3, [(1, 0), (0, 1), (2, 1)])
        np.testing.assert_array_equal(g.edges, [[0, 1], [1, 2]])
        assert g.num_features == 0

    @pytest.mark.parametrize("edges", [[(0, 0)], [(0, 3)], [(-1, 1)]])
    def test_invalid_edges(self, edges):
        with pytest.raises(ValueError):
            Graph(3, edges)

    def test_feature_row_mismatch(self):
        with pytest.raises(ValueError):
            Graph(3, [], np.ones((2, 1)))

    def test_relabel_is_isomorphic(self, rng):
        g = random_graph(rng, 5, 8)
        perm = rng.permutation(g.num_nodes)
        h = g.relabel(perm)
        np.testing.assert_array_equal(h.adjacency()[np.ix_(perm, perm)], g.adjacency())
        np.testing.assert_array_equal(h.node_features[perm], g.node_features)


class TestLaplacian:
    def test_path2(self, path2):
        np.testing.assert_array_equal(build_normalized_laplacian(path2), [[1, -1], [-1, 1]])

    def test_single_node(self):
        np.testing.assert_array_equal(build_normalized_laplacian(Graph(1, [])), [[1.0]])

    def test_triangle(self, triangle):
        lap = build_normalized_laplacian(triangle)
        np.testing.assert_allclose(np.diag(lap), 1.0)
        off = lap[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off, -0.5)

    def test_isolated_node_row(self):
        lap = build_normalized_laplacian(Graph(3, [(0, 1)]))
        np.testing.assert_array_equal(lap[2], [0, 0, 1])
        np.testing.assert_array_equal(lap[:, 2], [0, 0, 1])

    def test_symmetric_offdiagonal_values(self, rng):
        g = random_graph(rng, 6, 10, p=0.5)
        lap = build_normalized_laplacian(g)
        np.testing.assert_array_equal(lap, lap.T)
        deg = g.degrees()
        for i, j in g.edges:
            assert lap[i, j] == pytest.approx(-1 / np.sqrt(deg[i] * deg[j]))


class TestEigendecompose:
    def test_path2(self):
        d = eigendecompose([[1.0, -1.0], [-1.0, 1.0]])
        np.testing.assert_allclose(d.eigenvalues, [0.0, 2.0], atol=1e-12)
        u = np.abs(d.eigenvectors)
        np.testing.assert_allclose(u, np.full((2, 2), 1 / np.sqrt(2)), atol=1e-12)

    def test_single_isolated_node(self):
        d = eigendecompose([[1.0]])
        np.testing.assert_array_equal(d.eigenvalues, [1.0])

    def test_triangle(self, triangle):
        d = decompose(triangle)
        np.testing.assert_allclose(d.eigenvalues, [0.0, 1.5, 1.5], atol=1e-12)

    def test_symmetrizes_input(self):
        lap = np.array([[1.0, -1.0 + 1e-12], [-1.0, 1.0]])
        d = eigendecompose(lap)
        np.testing.assert_allclose(d.eigenvalues, [0, 2], atol=1e-10)

    def test_rejects_out_of_range_spectrum(self):
        with pytest.raises(SpectralError, match="graph 7"):
            eigendecompose(np.diag([0.0, 3.0]), graph_index=7)

    def test_clamps_tiny_violations(self):
        d = eigendecompose(np.diag([-1e-9, 2.0 + 1e-9]))
        assert d.eigenvalues[0] == 0.0 and d.eigenvalues[1] == 2.0

    def test_reconstruction_and_orthonormality(self, rng):
        for _ in range(50):
            g = random_graph(rng, 1, 30)
            lap = build_normalized_laplacian(g)
            d = eigendecompose(lap)
            u, lam = d.eigenvectors, d.eigenvalues
            assert np.max(np.abs(u.T @ u - np.eye(g.num_nodes))) <= 1e-8
            assert np.max(np.abs((u * lam) @ u.T - lap)) <= 1e-6
            assert np.all(np.diff(lam) >= 0)
            if g.num_edges:
                assert lam[0] == pytest.approx(0.0, abs=1e-8)

    def test_spectrum_bound_on_random_er_graphs(self, rng):
        for _ in range(1000):
            g = random_graph(rng, 1, 30)
            lam = decompose(g).eigenvalues
            assert lam.min() >= 0.0 and lam.max() <= 2.0


class TestFourierTransform:
    def test_path2(self, path2):
        xhat = graph_fourier_transform(decompose(path2), [1.0, 0.0])
        np.testing.assert_allclose(np.abs(xhat), [1 / np.sqrt(2)] * 2, atol=1e-12)

    def test_zero_signal(self, triangle):
        np.testing.assert_array_equal(graph_fourier_transform(decompose(triangle), np.zeros(3)), 0.0)

    def test_triangle_constant_signal(self, triangle):
        xhat = graph_fourier_transform(decompose(triangle), np.ones(3))
        np.testing.assert_allclose(np.abs(xhat), [np.sqrt(3), 0, 0], atol=1e-12)

    def test_length_mismatch(self, triangle):
        with pytest.raises(ValueError):
            graph_fourier_transform(decompose(triangle), np.ones(4))

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_parseval(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, 1, 30)
        x = rng.normal(size=g.num_nodes) * rng.uniform(0.01, 100)
        xhat = graph_fourier_transform(decompose(g), x)
        assert np.linalg.norm(xhat) == pytest.approx(np.linalg.norm(x), rel=1e-8)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_permutation_leaves_spectrum_unchanged(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, 2, 20)
        h = g.relabel(rng.permutation(g.num_nodes))
        np.testing.assert_allclose(decompose(h).eigenvalues, decompose(g).eigenvalues, atol=1e-8)
