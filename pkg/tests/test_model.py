"""Weighted per-dimension ridge, gradient descent strategies, head io."""

import numpy as np
import pytest

from conftest import random_head
from dimsift import (
    DataError,
    Dataset,
    NumericalError,
    RegressionHead,
    SynthConfig,
    TrainConfig,
    fit_closed_form,
    fit_gd,
    generate_synthetic,
    per_dim_loss,
    residuals,
)
from dimsift.data import teacher_head
from dimsift.model import GDObjective


def tiny_corpus(n=120, d=3, k=2, sd=0.05, teacher_seed=3, sample_seed=4):
    return generate_synthetic(
        SynthConfig(n, d, k, label_noise_sd=sd, teacher_seed=teacher_seed, sample_seed=sample_seed)
    )


# ------------------------------------------------------------- closed form

def test_ridge_hand_case_without_intercept():
    # x = [1, 2], y = [2, 4], alpha = 1: w = (1 + 4 + 1)^-1 (2 + 8) = 10/6
    corpus = Dataset(["a", "b"], np.array([[1.0], [2.0]]), np.array([[2.0], [4.0]]), ["d0"])
    head = fit_closed_form(corpus, config=TrainConfig(ridge_alpha=1.0, fit_bias=False))
    assert abs(head.weights[0, 0] - 10.0 / 6.0) < 1e-12
    assert head.biases[0] == 0.0


def test_noiseless_fit_recovers_teacher():
    cfg = SynthConfig(100, 5, 3, label_noise_sd=0.0, teacher_seed=7, sample_seed=8)
    corpus = generate_synthetic(cfg)
    head = fit_closed_form(corpus, config=TrainConfig(ridge_alpha=0.0))
    w_star, b_star = teacher_head(cfg)
    assert np.abs(head.weights - w_star).max() < 1e-8
    assert np.abs(head.biases - b_star).max() < 1e-8


def test_unit_weights_equal_unweighted():
    corpus = tiny_corpus()
    a = fit_closed_form(corpus, config=TrainConfig(ridge_alpha=0.1))
    b = fit_closed_form(corpus, np.ones((120, 2)), config=TrainConfig(ridge_alpha=0.1))
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.biases, b.biases)


def test_zero_weight_rows_act_as_deletion():
    corpus = tiny_corpus()
    drop = [4, 17, 60]
    weights = np.ones((120, 2))
    weights[drop, :] = 0.0
    keep = [i for i in range(120) if i not in drop]
    a = fit_closed_form(corpus, weights, config=TrainConfig(ridge_alpha=0.01))
    b = fit_closed_form(corpus.select(keep), config=TrainConfig(ridge_alpha=0.01))
    assert np.abs(a.weights - b.weights).max() < 1e-9
    assert np.abs(a.biases - b.biases).max() < 1e-9


def test_weighted_fit_matches_sqrt_weighted_lstsq():
    # independent route: minimising sum w_i (y_i - xa_i beta)^2 is ordinary
    # least squares on sqrt(w)-scaled rows
    rng = np.random.default_rng(0)
    corpus = tiny_corpus()
    weights = rng.uniform(0.1, 2.0, size=(120, 2))
    head = fit_closed_form(corpus, weights, config=TrainConfig(ridge_alpha=0.0))
    xa = np.hstack([corpus.features, np.ones((120, 1))])
    for k in range(2):
        s = np.sqrt(weights[:, k])[:, None]
        beta, *_ = np.linalg.lstsq(xa * s, corpus.labels[:, k] * s.ravel(), rcond=None)
        assert np.abs(head.weights[k] - beta[:-1]).max() < 1e-9
        assert abs(head.biases[k] - beta[-1]) < 1e-9


def test_weight_column_scaling_is_neutral_without_ridge():
    rng = np.random.default_rng(1)
    corpus = tiny_corpus()
    weights = rng.uniform(0.5, 1.5, size=(120, 2))
    scaled = weights.copy()
    scaled[:, 1] *= 3.7
    a = fit_closed_form(corpus, weights, config=TrainConfig(ridge_alpha=0.0))
    b = fit_closed_form(corpus, scaled, config=TrainConfig(ridge_alpha=0.0))
    assert np.abs(a.weights - b.weights).max() < 1e-9


def test_lambdas_do_not_move_the_per_dimension_optimum():
    corpus = tiny_corpus()
    a = fit_closed_form(corpus, config=TrainConfig(ridge_alpha=0.05))
    b = fit_closed_form(corpus, config=TrainConfig(ridge_alpha=0.05, lambdas=(4.0, 0.25)))
    assert np.array_equal(a.weights, b.weights)


def test_rank_deficiency_raises_numerical_error():
    rng = np.random.default_rng(2)
    corpus = Dataset(["a", "b", "c"], rng.normal(size=(3, 4)), rng.normal(size=(3, 2)), ["d0", "d1"])
    with pytest.raises(NumericalError):
        fit_closed_form(corpus, config=TrainConfig(ridge_alpha=0.0))
    # ridge regularisation restores solvability
    fit_closed_form(corpus, config=TrainConfig(ridge_alpha=1e-3))


def test_negative_weights_are_rejected():
    corpus = tiny_corpus()
    weights = np.ones((120, 2))
    weights[0, 0] = -1.0
    with pytest.raises(ValueError):
        fit_closed_form(corpus, weights)


# -------------------------------------------------------- gradient descent

def test_gd_equal_converges_to_closed_form():
    corpus = tiny_corpus()
    cf = fit_closed_form(corpus, config=TrainConfig(ridge_alpha=0.0))
    gd = fit_gd(corpus, config=TrainConfig(lr=0.3, epochs=4000))
    assert np.abs(gd.weights - cf.weights).max() < 1e-8
    assert np.abs(gd.biases - cf.biases).max() < 1e-8


def test_gd_records_decreasing_loss():
    corpus = tiny_corpus()
    head = fit_gd(corpus, config=TrainConfig(lr=0.1, epochs=50))
    hist = head.fit_info["loss_history"]
    assert len(hist) == 50
    assert hist[-1] < hist[0]
    assert np.all(np.isfinite(hist))


def test_gd_two_layer_trains_and_reports_scope():
    corpus = tiny_corpus(n=200, d=5, k=3, teacher_seed=1, sample_seed=2)
    head = fit_gd(corpus, config=TrainConfig(lr=0.05, epochs=300, hidden_dim=4, seed=3))
    assert head.weights.shape == (3, 4)
    assert head.shared_weight.shape == (4, 5)
    assert head.fit_info["loss_history"][-1] < head.fit_info["loss_history"][0]


def test_uncertainty_learns_larger_log_variance_for_noisier_dimension():
    # dimension 0 has 10x the label noise SD of dimension 1
    cfg = SynthConfig(300, 4, 2, label_noise_sd=(2.0, 0.2), teacher_seed=5, sample_seed=6)
    corpus = generate_synthetic(cfg)
    head = fit_gd(corpus, config=TrainConfig(strategy="uncertainty", lr=0.02, epochs=4000))
    s = head.fit_info["log_vars"]
    assert s[0] > s[1]


def test_rlw_is_seed_deterministic():
    corpus = tiny_corpus(n=200, d=5, k=3, teacher_seed=1, sample_seed=2)
    a = fit_gd(corpus, config=TrainConfig(strategy="rlw", lr=0.05, epochs=50, seed=9))
    b = fit_gd(corpus, config=TrainConfig(strategy="rlw", lr=0.05, epochs=50, seed=9))
    c = fit_gd(corpus, config=TrainConfig(strategy="rlw", lr=0.05, epochs=50, seed=10))
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)
    assert not np.array_equal(a.weights, c.weights)


@pytest.mark.filterwarnings("ignore:overflow")
def test_gd_divergence_raises_and_names_the_epoch():
    corpus = tiny_corpus()
    with pytest.raises(NumericalError, match="epoch"):
        fit_gd(corpus, config=TrainConfig(lr=1e6, epochs=100))


def _fd_per_dim_grads(obj, theta, h=1e-6):
    grads = np.zeros((obj.k, theta.size))
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        lu, _ = obj.per_dim_losses_and_grads(up)
        ld, _ = obj.per_dim_losses_and_grads(down)
        grads[:, i] = (lu - ld) / (2 * h)
    return grads


@pytest.mark.parametrize("hidden_dim", [None, 3])
def test_objective_gradients_match_finite_differences(hidden_dim):
    rng = np.random.default_rng(6)
    corpus = tiny_corpus(n=40, d=4, k=2, sd=0.2, teacher_seed=5, sample_seed=6)
    weights = rng.uniform(0.2, 1.8, size=(40, 2))
    obj = GDObjective(corpus, weights, np.array([1.3, 0.6]), hidden_dim)
    theta = obj.init_params(seed=1) + 0.05 * rng.standard_normal(obj.n_params)
    _, analytic = obj.per_dim_losses_and_grads(theta)
    fd = _fd_per_dim_grads(obj, theta)
    rel = np.abs(fd - analytic) / np.maximum(np.abs(analytic), 1.0)
    assert rel.max() < 1e-6


# ------------------------------------------------------- predict and io

def test_predict_composes_shared_layer_and_head():
    head = RegressionHead(
        weights=np.array([[1.0, 2.0]]),
        biases=np.array([3.0]),
        shared_weight=np.eye(2),
        shared_bias=np.array([1.0, -1.0]),
    )
    # h = x + (1, -1) = (1.5, -0.75); y = 1.5 - 1.5 + 3
    assert head.predict(np.array([0.5, 0.25]))[0] == pytest.approx(3.0, abs=1e-12)


def test_per_dim_loss_is_half_squared_residual():
    corpus = tiny_corpus()
    head = fit_closed_form(corpus, config=TrainConfig(ridge_alpha=0.1))
    table = per_dim_loss(head, corpus)
    res = residuals(head, corpus)
    assert table.sample_ids == corpus.ids
    assert np.abs(table.values - 0.5 * res**2).max() < 1e-15


def test_residuals_reject_mismatched_data():
    head = RegressionHead(weights=np.ones((1, 2)), biases=np.zeros(1))
    corpus = tiny_corpus(d=3, k=1)
    with pytest.raises(DataError, match="features"):
        residuals(head, corpus)


@pytest.mark.parametrize("hidden_dim", [None, 4])
def test_head_serialisation_round_trip(tmp_path, hidden_dim):
    rng = np.random.default_rng(8)
    head = random_head(rng, 3, 5, hidden_dim)
    path = tmp_path / "head.json"
    head.save(path)
    back = RegressionHead.load(path)
    assert np.array_equal(back.weights, head.weights)
    assert np.array_equal(back.biases, head.biases)
    if hidden_dim is None:
        assert back.shared_weight is None
    else:
        assert np.array_equal(back.shared_weight, head.shared_weight)
        assert np.array_equal(back.shared_bias, head.shared_bias)


def test_head_load_rejects_garbage(tmp_path):
    path = tmp_path / "head.json"
    path.write_text("{\"weights\": [[1.0]]}")
    with pytest.raises(DataError):
        RegressionHead.load(path)


def test_config_validation():
    with pytest.raises(ValueError, match="strategy"):
        TrainConfig(strategy="bogus")
    with pytest.raises(ValueError, match="nonnegative"):
        TrainConfig(ridge_alpha=-1.0)
    with pytest.raises(ValueError, match="positive"):
        TrainConfig(lambdas=(1.0, -1.0)).resolved_lambdas(2)
    with pytest.raises(ValueError, match="entries"):
        TrainConfig(lambdas=(1.0,)).resolved_lambdas(2)
    with pytest.raises(ValueError, match="hidden width"):
        RegressionHead(
            weights=np.ones((2, 3)),
            biases=np.ones(2),
            shared_weight=np.ones((4, 5)),
            shared_bias=np.ones(4),
        )
