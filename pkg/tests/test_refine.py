"""Union pruning, smooth reweighting, and the pruning baselines."""

import numpy as np
import pytest

from dimsift import (
    LossTable,
    PruneResult,
    Scope,
    WeightMatrix,
    ddp_select,
    ddr_weights,
    global_prune_select,
    loss_prune_select,
)
from dimsift.data import ceil_count
from dimsift.influence import SelfInfluenceTable
from dimsift.refine import top_scorer_indices


def make_table(scores, ids=None):
    scores = np.asarray(scores, dtype=float)
    n, k = scores.shape
    ids = ids or [f"s{i:03d}" for i in range(n)]
    return SelfInfluenceTable(scores, ids, [f"dim{j}" for j in range(k)], Scope.HEAD_ONLY, np.ones(k))


# --------------------------------------------------------------- selection

def test_top_scorer_stable_tie_break():
    # equal scores resolve to the smallest index, deterministically
    col = np.ones(10)
    assert list(top_scorer_indices(col, 3)) == [0, 1, 2]
    col2 = np.array([1.0, 5.0, 5.0, 0.0, 5.0])
    assert list(top_scorer_indices(col2, 2)) == [1, 2]


def test_prune_zero_rho_keeps_everything():
    table = make_table(np.random.default_rng(0).uniform(size=(20, 3)))
    result = ddp_select(table, 0.0)
    assert result.removed_ids == []
    assert result.kept_ids == table.sample_ids
    assert all(t == np.inf for t in result.thresholds)


def test_prune_disjoint_top_sets_remove_union():
    # each dimension flags its own block: the union has K * m members
    scores = np.zeros((30, 3))
    scores[0:3, 0] = [9, 8, 7]
    scores[10:13, 1] = [9, 8, 7]
    scores[20:23, 2] = [9, 8, 7]
    table = make_table(scores)
    result = ddp_select(table, 0.1)  # m = 3 per dimension
    assert sorted(result.removed_ids) == sorted(
        table.sample_ids[i] for i in [0, 1, 2, 10, 11, 12, 20, 21, 22]
    )
    assert result.thresholds == [7.0, 7.0, 7.0]


def test_prune_identical_columns_remove_single_set():
    col = np.arange(30, dtype=float)[:, None]
    table = make_table(np.repeat(col, 4, axis=1))
    result = ddp_select(table, 0.1)
    assert len(result.removed_ids) == 3
    assert set(result.removed_ids) == {"s029", "s028", "s027"}


def test_prune_risk_sets_are_rank_ordered_and_thresholded():
    scores = np.array([[0.5], [3.0], [1.0], [2.0]])
    table = make_table(scores)
    result = ddp_select(table, 0.5)  # m = 2
    assert result.per_dim_risk_sets == [["s001", "s003"]]
    assert result.thresholds == [2.0]
    assert result.kept_ids == ["s000", "s002"]  # corpus order, not score order


def test_prune_budget_bounds_hold_on_random_tables():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(10, 200))
        k = int(rng.integers(1, 6))
        rho = float(rng.uniform(0.01, 0.4))
        table = make_table(rng.uniform(size=(n, k)))
        result = ddp_select(table, rho)
        m = ceil_count(rho, n)
        assert m <= len(result.removed_ids) <= min(n, k * m)
        assert sorted(result.kept_ids + result.removed_ids) == sorted(table.sample_ids)
        # kept preserves corpus order
        pos = {sid: i for i, sid in enumerate(table.sample_ids)}
        assert [pos[s] for s in result.kept_ids] == sorted(pos[s] for s in result.kept_ids)


def test_prune_rejects_bad_rho():
    table = make_table(np.ones((5, 2)))
    with pytest.raises(ValueError):
        ddp_select(table, -0.1)
    with pytest.raises(ValueError):
        ddp_select(table, 1.1)


def test_prune_result_round_trip(tmp_path):
    table = make_table(np.random.default_rng(2).uniform(size=(40, 3)))
    result = ddp_select(table, 0.1)
    path = tmp_path / "prune.json"
    result.save(path)
    back = PruneResult.load(path)
    assert back.kept_ids == result.kept_ids
    assert back.removed_ids == result.removed_ids
    assert back.per_dim_risk_sets == result.per_dim_risk_sets
    assert back.thresholds == result.thresholds
    assert back.rho == result.rho


def test_removal_csv_lists_flagging_dimensions(tmp_path):
    scores = np.zeros((10, 2))
    scores[4, 0] = 5.0  # flagged by dim0 only
    scores[4, 1] = 5.0  # and by dim1: both named
    scores[7, 1] = 4.0
    scores[2, 0] = 4.0
    table = make_table(scores)
    result = ddp_select(table, 0.2)  # m = 2
    path = tmp_path / "removed.csv"
    result.removal_csv(path, table.dim_names)
    lines = path.read_text().splitlines()
    assert lines[0] == "id,removed_by_dims"
    rows = dict(line.split(",", 1) for line in lines[1:])
    assert rows["s004"] == "dim0|dim1"
    assert rows["s002"] == "dim0"
    assert rows["s007"] == "dim1"


# --------------------------------------------------------------- baselines

def test_loss_prune_ranks_by_loss_not_influence():
    # a well-fit high-leverage sample has large self-influence but small
    # loss; the loss baseline must order these two the other way round
    scores = np.array([[101.0], [8.0]])  # r=1 at |h|=10 vs r=2 at |h|=1
    losses = np.array([[0.5], [2.0]])
    ddp = ddp_select(make_table(scores, ids=["big_h", "big_r"]), 0.5)
    lp = loss_prune_select(LossTable(losses, ["big_h", "big_r"]), 0.5)
    assert ddp.removed_ids == ["big_h"]
    assert lp.removed_ids == ["big_r"]


def test_global_prune_budget_and_order():
    scores = np.array([3.0, 9.0, 1.0, 7.0, 5.0])
    ids = [f"s{i}" for i in range(5)]
    result = global_prune_select(scores, ids, 0.4)
    assert result.removed_ids == ["s1", "s3"]
    assert result.kept_ids == ["s0", "s2", "s4"]
    assert global_prune_select(scores, ids, 0.0).removed_ids == []
    assert global_prune_select(scores, ids, 1.0).kept_ids == []


# ------------------------------------------------------------- reweighting

def test_ddr_weights_hand_case():
    # column (0, 2): z = -/+1, raw = sigmoid(-z), mean raw = 1/2 exactly
    table = make_table(np.array([[0.0], [2.0]]), ids=["lo", "hi"])
    wm = ddr_weights(table)
    expect_hi = 2.0 / (1.0 + np.e)
    assert wm.weights[1, 0] == pytest.approx(expect_hi, abs=1e-6)
    assert wm.weights[0, 0] == pytest.approx(2.0 - expect_hi, abs=1e-6)


def test_ddr_global_mean_is_one():
    rng = np.random.default_rng(3)
    for _ in range(10):
        table = make_table(rng.lognormal(size=(int(rng.integers(5, 300)), int(rng.integers(1, 5)))))
        wm = ddr_weights(table, temperature=float(rng.uniform(0.2, 5.0)))
        assert abs(wm.weights.mean() - 1.0) < 1e-12
        assert np.all(wm.weights > 0.0)


def test_ddr_is_monotone_nonincreasing_in_score():
    rng = np.random.default_rng(4)
    table = make_table(rng.uniform(size=(50, 3)))
    wm = ddr_weights(table)
    for k in range(3):
        order = np.argsort(table.scores[:, k], kind="stable")
        assert np.all(np.diff(wm.weights[order, k]) <= 1e-12)


def test_ddr_extreme_scores_stay_positive():
    # z / temperature = 1000 without the exponent clamp: the sigmoid would
    # underflow to an exact zero weight and break strict positivity
    table = make_table(np.array([[0.0], [1e150]]))
    wm = ddr_weights(table, temperature=1e-3)
    assert np.all(wm.weights > 0.0)
    assert np.all(np.isfinite(wm.weights))


def test_ddr_constant_column_gets_unit_weights():
    table = make_table(np.full((7, 1), 3.3))
    wm = ddr_weights(table)
    assert np.array_equal(wm.weights, np.ones((7, 1)))


def test_ddr_high_temperature_flattens_weights():
    rng = np.random.default_rng(5)
    table = make_table(rng.uniform(size=(40, 2)))
    wm = ddr_weights(table, temperature=1e9)
    assert np.abs(wm.weights - 1.0).max() < 1e-6


def test_ddr_columns_are_independent():
    rng = np.random.default_rng(6)
    scores = rng.uniform(size=(30, 2))
    other = scores.copy()
    other[:, 1] = rng.uniform(size=30) * 100
    a = ddr_weights(make_table(scores))
    b = ddr_weights(make_table(other))
    # column 0 raw weights are untouched; only the global rescale differs,
    # so within-column ratios are preserved
    ra = a.weights[:, 0] / a.weights[0, 0]
    rb = b.weights[:, 0] / b.weights[0, 0]
    assert np.abs(ra - rb).max() < 1e-12


def test_ddr_rejects_bad_parameters():
    table = make_table(np.ones((5, 1)))
    with pytest.raises(ValueError):
        ddr_weights(table, temperature=0.0)
    with pytest.raises(ValueError):
        ddr_weights(table, epsilon=-1.0)


def test_weight_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    wm = ddr_weights(make_table(rng.uniform(size=(20, 3))), temperature=0.7)
    path = tmp_path / "weights.json"
    wm.save(path)
    back = WeightMatrix.load(path)
    assert np.array_equal(back.weights, wm.weights)
    assert back.sample_ids == wm.sample_ids
    assert back.temperature == wm.temperature
    assert np.array_equal(np.asarray(back.per_dim_stats), np.asarray(wm.per_dim_stats))
