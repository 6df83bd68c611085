import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvfault.analysis import (
    LINKAGES,
    components_for_variance,
    cut_dendrogram,
    hierarchical_cluster,
    jacobi_eigh,
    pca_fit,
    pca_inverse,
    pca_transform,
)

from .oracles import brute_force_agglomerate, polynomial_eigenvalues

COV3 = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.25], [0.5, 0.25, 2.0]])


def test_points_on_diagonal():
    t = np.linspace(-2, 3, 11)
    m = pca_fit(np.column_stack([t, t]))
    np.testing.assert_allclose(m.components[0], [2**-0.5, 2**-0.5], atol=1e-12)
    assert m.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-12)


def test_isotropic_eigenvalues_equal():
    X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    m = pca_fit(X)
    assert abs(m.eigenvalues[0] - m.eigenvalues[1]) < 1e-10


def test_jacobi_matches_cubic_roots():
    vals, vecs = jacobi_eigh(COV3)
    np.testing.assert_allclose(np.sort(vals)[::-1], polynomial_eigenvalues(COV3), atol=1e-10)
    np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, COV3, atol=1e-12)


def test_jacobi_diagonal_and_tiny_couplings():
    vals, _ = jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
    assert sorted(vals) == [1.0, 2.0, 3.0]
    A = np.array([[1.0, 1e-200], [1e-200, 1.0 + 1e-15]])
    vals, V = jacobi_eigh(A)
    assert np.all(np.isfinite(vals)) and np.all(np.isfinite(V))


@settings(max_examples=20)
@given(st.integers(2, 4), st.integers(0, 2**32))
def test_pca_against_polynomial_oracle(d, seed):
    X = np.random.default_rng(seed).normal(size=(d + 6, d)) * np.arange(1, d + 1)
    m = pca_fit(X)
    cov = np.cov(X, rowvar=False)
    np.testing.assert_allclose(m.eigenvalues, polynomial_eigenvalues(cov), atol=1e-8)


@given(st.integers(1, 6), st.integers(0, 2**32))
def test_pca_invariants(d, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(10, d)) @ rng.normal(size=(d, d))
    m = pca_fit(X)
    np.testing.assert_allclose(m.components @ m.components.T, np.eye(d), atol=1e-10)
    assert np.all(m.eigenvalues >= -1e-12)
    assert np.all(np.diff(m.eigenvalues) <= 1e-12)
    assert abs(m.eigenvalues.sum() - np.trace(np.atleast_2d(np.cov(X, rowvar=False)))) < 1e-10 * max(1.0, m.eigenvalues.sum())
    assert m.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-12)
    for row in m.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_transform_and_reconstruction():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 4)) @ rng.normal(size=(4, 4))
    full = pca_fit(X)
    np.testing.assert_allclose(pca_transform(full, X.mean(axis=0)), 0.0, atol=1e-12)
    assert np.max(np.abs(pca_inverse(full, pca_transform(full, X)) - X)) < 1e-10
    errors = []
    for k in range(1, 5):
        m = pca_fit(X, k)
        errors.append(np.sum((pca_inverse(m, pca_transform(m, X)) - X) ** 2))
    assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
    assert pca_fit(X, 2).explained_variance_ratio.sum() <= 1.0


def test_pca_errors():
    with pytest.raises(ValueError):
        pca_fit(np.ones((5, 2)), 3)
    with pytest.raises(ValueError):
        pca_fit(np.ones((1, 2)))
    with pytest.raises(ValueError):
        pca_transform(pca_fit(np.random.default_rng(0).normal(size=(4, 2))), np.ones(3))


def test_components_for_variance():
    X = np.random.default_rng(1).normal(size=(200, 3)) * [10.0, 1.0, 0.1]
    m = pca_fit(X)
    assert components_for_variance(m, 0.95) == 1
    assert components_for_variance(m, 0.99999) == 3


def test_three_point_single_linkage():
    d = hierarchical_cluster([0.0, 1.0, 10.0], "single")
    assert d.merges == [(0, 1, 1.0), (2, 3, 9.0)]
    np.testing.assert_array_equal(cut_dendrogram(d, 2), [0, 0, 1])
    np.testing.assert_array_equal(cut_dendrogram(d, 3), [0, 1, 2])
    np.testing.assert_array_equal(cut_dendrogram(d, 1), [0, 0, 0])
    with pytest.raises(ValueError):
        cut_dendrogram(d, 4)


def test_identical_points_merge_at_zero():
    assert hierarchical_cluster([[1.0, 2.0], [1.0, 2.0], [5.0, 5.0]]).merges[0] == (0, 1, 0.0)


def test_cluster_errors():
    with pytest.raises(ValueError):
        hierarchical_cluster([[1.0]])
    with pytest.raises(ValueError):
        hierarchical_cluster([[0.0], [1.0]], "ward")


def test_dendrogram_csv():
    text = hierarchical_cluster([0.0, 1.0, 10.0], "single").to_csv()
    assert text.splitlines() == ["step,cluster_a,cluster_b,distance", "0,0,1,1.0", "1,2,3,9.0"]


def _same(merges, oracle):
    assert [m[:2] for m in merges] == [o[:2] for o in oracle]
    np.testing.assert_allclose([m[2] for m in merges], [o[2] for o in oracle], rtol=1e-12, atol=1e-12)


@settings(max_examples=100)
@given(st.integers(2, 6), st.integers(1, 3), st.sampled_from(LINKAGES), st.integers(0, 2**32))
def test_clustering_matches_brute_force(n, d, linkage, seed):
    X = np.random.default_rng(seed).normal(size=(n, d))
    dend = hierarchical_cluster(X, linkage)
    assert len(dend.merges) == n - 1
    _same(dend.merges, brute_force_agglomerate(X, linkage))


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=2, max_size=6), st.sampled_from(["single", "complete"]))
def test_clustering_ties_on_integer_grid(points, linkage):
    # integer coordinates give exactly representable tied distances, so tie-breaking is exercised
    X = np.array(points, dtype=float)
    _same(hierarchical_cluster(X, linkage).merges, brute_force_agglomerate(X, linkage))


@given(st.integers(2, 30), st.sampled_from(LINKAGES), st.integers(0, 2**32))
def test_merge_distances_non_decreasing(n, linkage, seed):
    X = np.random.default_rng(seed).normal(size=(n, 2))
    dist = [m[2] for m in hierarchical_cluster(X, linkage).merges]
    assert all(b >= a - 1e-12 for a, b in zip(dist, dist[1:]))
