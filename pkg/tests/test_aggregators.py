import numpy as np
import pytest

from bfl import aggregators as agg
from bfl import oracles
from bfl.aggregators import AggregatorConfig, ClientUpdate


def updates_from(mat, counts=None):
    counts = counts if counts is not None else [1] * len(mat)
    return [ClientUpdate(i, np.asarray(row, dtype=float), c) for i, (row, c) in enumerate(zip(mat, counts))]


def random_updates(rng, n, d):
    return updates_from(rng.standard_normal((n, d)))


def test_fedavg_weights_by_sample_count():
    ups = updates_from([[0.0, 0.0], [3.0, 6.0]], counts=[1, 2])
    np.testing.assert_allclose(agg.fedavg(ups), [2.0, 4.0])


def test_fedavg_equal_counts_is_plain_mean():
    rng = np.random.default_rng(0)
    ups = random_updates(rng, 5, 4)
    np.testing.assert_allclose(
        agg.fedavg(ups), np.mean([u.params for u in ups], axis=0)
    )


def test_coord_median_odd_and_even():
    ups = updates_from([[1.0], [5.0], [2.0]])
    np.testing.assert_allclose(agg.coord_median(ups), [2.0])
    ups = updates_from([[1.0], [5.0], [2.0], [4.0]])
    np.testing.assert_allclose(agg.coord_median(ups), [3.0])


def test_median_matches_sort_oracle_100_instances():
    rng = np.random.default_rng(100)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(1, 6))
        ups = random_updates(rng, n, d)
        vecs = [u.params for u in ups]
        np.testing.assert_array_equal(
            agg.coord_median(ups), oracles.sort_based_median(vecs)
        )


def test_trimmed_mean_matches_sort_oracle_100_instances():
    rng = np.random.default_rng(101)
    checked = 0
    while checked < 100:
        n = int(rng.integers(2, 9))
        d = int(rng.integers(1, 6))
        beta = float(rng.choice([0.1, 0.2, 0.3]))
        if n - 2 * int(np.floor(beta * n)) < 1:
            continue
        checked += 1
        ups = random_updates(rng, n, d)
        vecs = [u.params for u in ups]
        np.testing.assert_allclose(
            agg.trimmed_mean(ups, beta),
            oracles.sort_based_trimmed_mean(vecs, beta),
            rtol=1e-12,
        )


def test_trimmed_mean_with_zero_cut_is_mean():
    ups = updates_from([[1.0], [2.0], [9.0]])
    np.testing.assert_allclose(agg.trimmed_mean(ups, 0.1), [4.0])


def test_trimmed_mean_cuts_extremes():
    ups = updates_from([[v] for v in (0.0, 1.0, 2.0, 3.0, 100.0)])
    np.testing.assert_allclose(agg.trimmed_mean(ups, 0.2), [2.0])


def test_multi_krum_matches_brute_force_100_instances():
    """Selected id sets and aggregates equal a loops-only transcription."""
    rng = np.random.default_rng(102)
    checked = 0
    while checked < 100:
        n = int(rng.integers(4, 9))
        d = int(rng.integers(1, 6))
        beta = float(rng.choice([0.1, 0.2, 0.3]))
        if n - int(np.ceil(beta * n)) - 2 < 1:
            continue
        checked += 1
        ups = random_updates(rng, n, d)
        ids, mixed = agg.multi_krum(ups, beta)
        oracle_ids, oracle_mixed = oracles.brute_force_multi_krum(
            [u.params for u in ups], [u.client_id for u in ups], beta
        )
        assert ids == oracle_ids
        np.testing.assert_allclose(mixed, oracle_mixed, rtol=1e-12)


def test_nnm_krum_matches_brute_force_100_instances():
    rng = np.random.default_rng(103)
    checked = 0
    while checked < 100:
        n = int(rng.integers(4, 9))
        d = int(rng.integers(1, 6))
        beta = float(rng.choice([0.1, 0.2, 0.3]))
        if n - int(np.ceil(beta * n)) - 2 < 1:
            continue
        checked += 1
        ups = random_updates(rng, n, d)

        mixed = agg.nnm_mix(ups, beta)
        oracle_mixed = oracles.brute_force_nnm_mix(
            [u.params for u in ups], [u.client_id for u in ups], beta
        )
        for got, want in zip(mixed, oracle_mixed):
            np.testing.assert_allclose(got.params, want, rtol=1e-12)

        ids, vec = agg.nnm_krum(ups, beta)
        oracle_ids, oracle_vec = oracles.brute_force_multi_krum(
            [u.params for u in mixed], [u.client_id for u in mixed], beta
        )
        assert ids == oracle_ids
        np.testing.assert_allclose(vec, oracle_vec, rtol=1e-12)


def test_multi_krum_rejects_outlier():
    rng = np.random.default_rng(5)
    cloud = rng.standard_normal((7, 3)) * 0.1
    cloud[3] = [50.0, 50.0, 50.0]
    ids, _ = agg.multi_krum(updates_from(cloud), 0.2)
    assert 3 not in ids
    assert len(ids) == 5


def test_multi_krum_score_tie_prefers_lower_id():
    # Four corners of a square: all scores equal, so selection is by id.
    square = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    ids, _ = agg.multi_krum(updates_from(square), 0.1)
    assert ids == {0, 1, 2}


def test_multi_krum_too_small_raises():
    ups = updates_from([[0.0], [1.0], [2.0]])
    with pytest.raises(ValueError):
        agg.multi_krum(ups, 0.3)  # 3 - 1 - 2 = 0 peers


def test_geometric_median_equilateral_triangle():
    """Fermat point of the unit equilateral triangle, value frozen by hand."""
    pts = updates_from([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    out = agg.geometric_median(pts)
    np.testing.assert_allclose(out, [0.5, 0.28868], atol=1e-3)


def test_geometric_median_objective_matches_refined_grid_20_instances():
    rng = np.random.default_rng(104)
    for _ in range(20):
        n = int(rng.integers(3, 9))
        mat = rng.standard_normal((n, 2)) * rng.uniform(0.5, 3.0)
        ups = updates_from(mat)
        found = agg.geometric_median(ups)
        _, oracle_obj = oracles.grid_search_geometric_median(mat)
        assert abs(agg.geometric_objective(found, mat) - oracle_obj) <= 1e-6


def test_geometric_median_collinear_and_coincident():
    ups = updates_from([[0.0, 0.0], [0.0, 0.0], [10.0, 0.0]])
    out = agg.geometric_median(ups)
    assert np.all(np.isfinite(out))
    mat = np.stack([u.params for u in ups])
    # the duplicated point is the exact median here
    assert agg.geometric_objective(out, mat) <= agg.geometric_objective(
        np.array([0.0, 0.0]), mat
    ) + 1e-9


def test_geometric_median_single_and_pair():
    one = updates_from([[2.0, 3.0]])
    np.testing.assert_allclose(agg.geometric_median(one), [2.0, 3.0])
    pair = updates_from([[0.0, 0.0], [2.0, 0.0]])
    out = agg.geometric_median(pair)
    mat = np.stack([u.params for u in pair])
    assert agg.geometric_objective(out, mat) <= 2.0 + 1e-9


def test_aggregate_dispatch_covers_all_rules():
    rng = np.random.default_rng(6)
    ups = random_updates(rng, 6, 3)
    for kind in agg.AGGREGATOR_KINDS:
        vec = agg.aggregate(ups, AggregatorConfig(kind=kind, beta=0.2))
        assert vec.shape == (3,)
        assert np.all(np.isfinite(vec))
    with pytest.raises(ValueError):
        agg.aggregate(ups, AggregatorConfig(kind="fedavg", beta=-0.5))


def test_aggregate_rejects_empty_and_mixed_dims():
    with pytest.raises(ValueError):
        agg.fedavg([])
    bad = [
        ClientUpdate(0, np.zeros(3), 1),
        ClientUpdate(1, np.zeros(4), 1),
    ]
    with pytest.raises(ValueError):
        agg.fedavg(bad)


def test_client_update_validation():
    with pytest.raises(ValueError):
        ClientUpdate(0, np.zeros((2, 2)), 1)
    with pytest.raises(ValueError):
        ClientUpdate(0, np.zeros(2), 0)
