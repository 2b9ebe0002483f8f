import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import rankdata, spearmanr
from sklearn.metrics import roc_auc_score

import oracles
from phenolens.analytics import (
    PCA2,
    ClassCenterModel,
    EmbeddingSet,
    anomaly_scores,
    auroc,
    average_ranks,
    center_similarities,
    center_similarity,
    class_centers,
    concentration_gradient,
    detect_novel,
    drift_score,
    mean_similarity_matrix,
    nearest_center,
    pairwise_stats,
    pca2,
    spearman,
)
from phenolens.errors import (
    ClassMismatchError,
    DataError,
    DegenerateCenterError,
    DegenerateEmbeddingError,
    DimensionMismatchError,
    EmptyClassError,
    InsufficientDataError,
)

TOL = 1e-9


def _case(seed):
    rows, labels, classes = oracles.random_embedding_case(random.Random(seed))
    return EmbeddingSet.from_arrays(np.array(rows), labels), rows, labels, classes


@pytest.mark.parametrize("seed", range(30))
def test_analytics_match_naive_loops(seed):
    E, rows, labels, classes = _case(seed)
    c = class_centers(E, classes)
    ref_centers = oracles.centers(rows, labels, classes)
    assert oracles.max_abs_diff(c.raw, ref_centers) <= TOL
    M = mean_similarity_matrix(E, c)
    assert oracles.max_abs_diff(M.values, oracles.mean_similarity(rows, labels, ref_centers, classes)) <= TOL
    S = center_similarity(c)
    assert oracles.max_abs_diff(S.values, oracles.center_similarity(ref_centers)) <= TOL
    stats = pairwise_stats(E)
    lo, mean, hi, n = oracles.pairwise(rows)
    assert abs(stats["min"] - lo) <= TOL and abs(stats["mean"] - mean) <= TOL
    assert abs(stats["max"] - hi) <= TOL and stats["n_pairs"] == n


def test_two_class_hand_example():
    E = EmbeddingSet.from_arrays(np.array([[1.0, 0.0], [3.0, 0.0], [0.0, 2.0]]), ["a", "a", "b"])
    c = class_centers(E)
    np.testing.assert_allclose(c.raw, [[2.0, 0.0], [0.0, 2.0]])
    np.testing.assert_allclose(mean_similarity_matrix(E, c).values, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(center_similarity(c).values, np.eye(2), atol=1e-15)
    stats = pairwise_stats(E)
    assert stats == {"min": 0.0, "mean": pytest.approx(1 / 3), "max": 1.0, "n_pairs": 3}


def test_center_similarity_symmetric_unit_diagonal():
    E, *_ = _case(99)
    S = center_similarity(class_centers(E)).values
    assert np.max(np.abs(S - S.T)) == 0.0
    assert np.max(np.abs(np.diag(S) - 1.0)) <= TOL
    assert np.all(np.abs(S) <= 1.0 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_scale_and_permutation_invariance(seed, scale, perm_seed):
    E, rows, labels, classes = _case(seed)
    c = class_centers(E, classes)
    base = (
        mean_similarity_matrix(E, c).values,
        center_similarity(c).values,
        pairwise_stats(E),
        anomaly_scores(E.H[0], c),
    )
    perm = np.random.default_rng(perm_seed).permutation(len(E))
    for H, lab in [(E.H * scale, E.labels), (E.H[perm], [E.labels[i] for i in perm])]:
        E2 = EmbeddingSet.from_arrays(H, lab)
        c2 = class_centers(E2, classes)
        assert np.max(np.abs(mean_similarity_matrix(E2, c2).values - base[0])) <= TOL
        assert np.max(np.abs(center_similarity(c2).values - base[1])) <= TOL
        s2 = pairwise_stats(E2)
        assert all(abs(s2[k] - base[2][k]) <= TOL for k in ("min", "mean", "max"))
    c_scaled = class_centers(EmbeddingSet.from_arrays(E.H * scale, E.labels), classes)
    assert np.max(np.abs(anomaly_scores(E.H[0] * scale, c_scaled) - base[3])) <= TOL


def test_permutation_gives_identical_centers():
    E, *_ = _case(5)
    perm = np.random.default_rng(0).permutation(len(E))
    c1 = class_centers(E)
    c2 = class_centers(EmbeddingSet.from_arrays(E.H[perm], [E.labels[i] for i in perm]), c1.classes)
    assert c1.raw.tobytes() == c2.raw.tobytes()


def test_error_cases():
    E = EmbeddingSet.from_arrays(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]), ["a", "a", "b"])
    with pytest.raises(DegenerateCenterError):
        class_centers(E)
    with pytest.raises(EmptyClassError):
        class_centers(E, ["b", "z"])
    with pytest.raises(DegenerateEmbeddingError):
        pairwise_stats(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(InsufficientDataError):
        pairwise_stats(np.array([[1.0, 0.0]]))
    c = class_centers(E, ["b"])
    with pytest.raises(ClassMismatchError):
        mean_similarity_matrix(E, c)
    with pytest.raises(DimensionMismatchError):
        mean_similarity_matrix(EmbeddingSet.from_arrays(np.ones((2, 3)), ["b", "b"]), c)


def test_anomaly_and_nearest_center():
    E = EmbeddingSet.from_arrays(np.array([[1.0, 0.0], [0.0, 1.0]]), ["a", "b"])
    c = class_centers(E)
    np.testing.assert_allclose(anomaly_scores(np.array([1.0, 0.0]), c), [0.0, 1.0])
    np.testing.assert_allclose(anomaly_scores(np.array([-1.0, 0.0]), c), [2.0, 1.0])
    assert nearest_center(np.array([0.2, 0.9]), c) == 1
    assert nearest_center(np.array([[0.2, 0.9], [1.0, 1.0]]), c).tolist() == [1, 0]


def test_detect_novel_threshold():
    E = EmbeddingSet.from_arrays(np.array([[1.0, 0.0], [0.0, 1.0]]), ["a", "b"])
    c = class_centers(E)
    q = np.array([[1.0, 0.0], [1.0, 1.0], [-1.0, -1.0]])
    flags, best = detect_novel(q, c, threshold=0.75)
    np.testing.assert_allclose(best, [1.0, math.sqrt(0.5), -math.sqrt(0.5)])
    assert flags.tolist() == [False, True, True]
    with pytest.raises(ValueError):
        detect_novel(q, c, threshold=0.0)


def test_drift_examples():
    E = EmbeddingSet.from_arrays(np.array([[1.0, 0.0], [0.0, 1.0]]), ["a", "b"])
    c = class_centers(E)
    assert drift_score(np.array([[2.0, 0.0], [0.0, 5.0]]), c) == 0.0
    assert drift_score(np.array([[-1.0, -1.0]]), c) == pytest.approx(1 + math.sqrt(0.5))
    with pytest.raises(InsufficientDataError):
        drift_score(np.zeros((0, 2)), c)


def test_average_ranks_match_scipy():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.integers(0, 6, size=rng.integers(1, 40)).astype(float)
        np.testing.assert_array_equal(average_ranks(x), rankdata(x))


def test_spearman_matches_scipy():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(3, 60))
        x = rng.integers(0, 4, n).astype(float)
        y = x + rng.normal(size=n)
        rho, degenerate = spearman(x, y)
        if np.ptp(x) == 0:
            assert degenerate and rho == 0.0
        else:
            assert not degenerate
            assert abs(rho - spearmanr(x, y)[0]) <= 1e-12


def test_spearman_special_cases():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == (pytest.approx(1.0), False)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == (pytest.approx(-1.0), False)
    assert spearman([1, 1, 1], [1, 2, 3]) == (0.0, True)


def test_auroc_matches_counting_and_sklearn():
    rng = np.random.default_rng(2)
    for _ in range(30):
        pos = rng.integers(0, 8, size=rng.integers(1, 30)).astype(float)
        neg = rng.integers(0, 8, size=rng.integers(1, 30)).astype(float)
        a = auroc(pos, neg)
        assert abs(a - oracles.naive_auroc(pos, neg)) <= 1e-12
        y = np.r_[np.ones(pos.size), np.zeros(neg.size)]
        assert abs(a - roc_auc_score(y, np.r_[pos, neg])) <= 1e-12
    assert auroc([2.0, 3.0], [0.0, 1.0]) == 1.0
    assert auroc([0.0], [1.0]) == 0.0
    with pytest.raises(InsufficientDataError):
        auroc([], [1.0])


def _dose_set(noise, seed=0):
    rng = np.random.default_rng(seed)
    healthy = rng.normal(size=(30, 8)) * noise + np.eye(8)[0]
    rows, labels, conc = list(healthy), ["N"] * 30, [0.0] * 30
    for level in (0.5, 1.0, 1.5, 2.0):
        for _ in range(10):
            v = np.eye(8)[0] + 0.6 * level * np.eye(8)[1] + rng.normal(size=8) * noise
            rows.append(v)
            labels.append("D")
            conc.append(level)
    return EmbeddingSet.from_arrays(np.array(rows), labels, np.array(conc))


def test_concentration_gradient_monotone_signal():
    report = concentration_gradient(_dose_set(0.02), "N")
    assert report.spearman["D"] > 0.9
    assert report.consistency["D"] > 0.95
    assert report.levels["D"] == [0.5, 1.0, 1.5, 2.0]


def test_concentration_gradient_skips_few_levels_and_checks_inputs():
    E = _dose_set(0.02)
    keep = np.array([lab == "N" or c <= 1.0 for lab, c in zip(E.labels, E.concentrations)])
    report = concentration_gradient(E.subset(keep), "N")
    assert "D" in report.skipped and "D" not in report.spearman
    with pytest.raises(ClassMismatchError):
        concentration_gradient(E, "missing")
    with pytest.raises(DataError):
        concentration_gradient(EmbeddingSet.from_arrays(E.H, E.labels), "N")


def test_pca2_matches_eigendecomposition():
    rng = np.random.default_rng(3)
    for _ in range(10):
        d = int(rng.integers(3, 20))
        scales = np.sort(rng.uniform(0.1, 1.0, d))[::-1] * np.r_[4.0, 2.0, np.ones(d - 2)]
        H = rng.normal(size=(200, d)) * scales
        H = H @ np.linalg.qr(rng.normal(size=(d, d)))[0]
        coords, comps, explained = pca2(H)
        X = H - H.mean(axis=0)
        C = X.T @ X / (len(H) - 1)
        w, V = np.linalg.eigh(C)
        for k in range(2):
            v = V[:, -1 - k]
            assert abs(abs(comps[k] @ v) - 1.0) <= 1e-6
            assert np.linalg.norm(C @ comps[k] - w[-1 - k] * comps[k]) <= 1e-6 * w[-1]
            assert comps[k][np.argmax(np.abs(comps[k]))] > 0
        np.testing.assert_allclose(comps @ comps.T, np.eye(2), atol=1e-9)
        np.testing.assert_allclose(explained, w[::-1][:2] / w.sum(), rtol=1e-6)
        np.testing.assert_allclose(coords, X @ comps.T, atol=1e-9)


def test_pca2_deterministic_and_low_rank():
    H = np.outer(np.arange(10.0), [1.0, 2.0, 0.0])
    coords, comps, explained = pca2(H)
    assert explained[0] == pytest.approx(1.0) and explained[1] == pytest.approx(0.0, abs=1e-12)
    again = pca2(H)
    assert again[0].tobytes() == coords.tobytes()
    with pytest.raises(InsufficientDataError):
        pca2(H[:2])


def test_class_center_model_estimator():
    E, rows, labels, _ = _case(11)
    classes = sorted(set(labels))
    model = ClassCenterModel(novelty_threshold=0.5).fit(E.H, np.array(labels))
    sims = model.transform(E.H)
    np.testing.assert_allclose(sims, center_similarities(E.H, class_centers(E, classes)), atol=0)
    assert list(model.classes_) == classes
    assert model.predict(E.H).shape == (len(E),)
    np.testing.assert_allclose(model.score_samples(E.H), sims.max(axis=1))
    np.testing.assert_array_equal(model.is_novel(E.H), sims.max(axis=1) < 0.5)
    np.testing.assert_allclose(model.anomaly_scores(E.H), 1 - sims)
    assert 0 <= model.drift_score(E.H) <= 2
    assert model.get_params() == {"novelty_threshold": 0.5}


def test_pca2_estimator():
    H = np.random.default_rng(4).normal(size=(50, 6)) * [5, 3, 1, 1, 1, 1]
    est = PCA2().fit(H)
    np.testing.assert_allclose(est.transform(H), pca2(H)[0], atol=1e-9)
    assert est.fit_transform(H).shape == (50, 2)
