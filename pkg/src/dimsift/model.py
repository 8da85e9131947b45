"""Per-dimension linear regression heads over shared features.

Supported fitting paths:

    closed form     per-dimension weighted ridge over augmented inputs [h; 1],
                    solving (X' diag(w) X + alpha D) beta = X' diag(w) y with
                    no penalty on the bias coordinate (D has a zero in the
                    bias slot)
    gradient        full-batch gradient descent on the weighted sum of
                    per-dimension squared-error losses, with a fixed (Equal),
                    learned (uncertainty log-variance), or per-epoch random
                    (softmax draws) combination of dimensions

An optional shared affine layer (identity activation) sits below the heads so
that influence scopes covering the last two layers have coupled parameters.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import DataError, NumericalError


class Scope(str, Enum):
    """Parameter scope used for gradients and influence scores."""

    HEAD_ONLY = "head_only"
    LAST_TWO_LAYERS = "last_two_layers"


STRATEGIES = ("equal", "uncertainty", "rlw")


@dataclass
class RegressionHead:
    """K independent affine heads, optionally on top of one shared affine layer.

    weights is (K, p) where p is the feature dimension, or the hidden width
    when a shared layer is present. fit_info carries fitting diagnostics
    (loss trajectory, learned loss-balance state) and is not used by
    prediction.
    """

    weights: np.ndarray
    biases: np.ndarray
    shared_weight: Optional[np.ndarray] = None
    shared_bias: Optional[np.ndarray] = None
    fit_info: Optional[dict] = None

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ValueError(
                f"weights must be (K, p) with matching (K,) biases, "
                f"got {self.weights.shape} and {self.biases.shape}"
            )
        if (self.shared_weight is None) != (self.shared_bias is None):
            raise ValueError("shared_weight and shared_bias must be given together")
        if self.shared_weight is not None:
            self.shared_weight = np.ascontiguousarray(self.shared_weight, dtype=np.float64)
            self.shared_bias = np.ascontiguousarray(self.shared_bias, dtype=np.float64)
            m, _ = self.shared_weight.shape
            if self.shared_bias.shape != (m,):
                raise ValueError("shared_bias must have one entry per hidden unit")
            if self.weights.shape[1] != m:
                raise ValueError(
                    f"head width {self.weights.shape[1]} does not match hidden width {m}"
                )
        for a in (self.weights, self.biases, self.shared_weight, self.shared_bias):
            if a is not None and not np.all(np.isfinite(a)):
                raise ValueError("head parameters must be finite")

    @property
    def n_dims(self) -> int:
        return self.weights.shape[0]

    @property
    def head_width(self) -> int:
        """Width of the head input: d, or the hidden width with a shared layer."""
        return self.weights.shape[1]

    @property
    def feature_dim(self) -> int:
        if self.shared_weight is not None:
            return self.shared_weight.shape[1]
        return self.weights.shape[1]

    @property
    def hidden_dim(self) -> Optional[int]:
        return None if self.shared_weight is None else self.shared_weight.shape[0]

    @property
    def scope_descriptor(self) -> Scope:
        """Widest scope this head supports."""
        return Scope.HEAD_ONLY if self.shared_weight is None else Scope.LAST_TWO_LAYERS

    def head_inputs(self, features: np.ndarray) -> np.ndarray:
        """Inputs seen by the heads: raw features, or shared-layer activations."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if self.shared_weight is None:
            return x
        return x @ self.shared_weight.T + self.shared_bias

    def predict_batch(self, features: np.ndarray) -> np.ndarray:
        u = self.head_inputs(features)
        return u @ self.weights.T + self.biases

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            return self.predict_batch(features[None, :])[0]
        return self.predict_batch(features)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "shared_weight": None if self.shared_weight is None else self.shared_weight.tolist(),
            "shared_bias": None if self.shared_bias is None else self.shared_bias.tolist(),
            "fit_info": self.fit_info,
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionHead":
        try:
            return cls(
                weights=np.asarray(d["weights"], dtype=np.float64),
                biases=np.asarray(d["biases"], dtype=np.float64),
                shared_weight=None
                if d.get("shared_weight") is None
                else np.asarray(d["shared_weight"], dtype=np.float64),
                shared_bias=None
                if d.get("shared_bias") is None
                else np.asarray(d["shared_bias"], dtype=np.float64),
                fit_info=d.get("fit_info"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"invalid head document: {e}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RegressionHead":
        p = Path(path)
        if not p.exists():
            raise DataError(f"head file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise DataError(f"malformed head file {p}: {e}") from None
        return cls.from_dict(doc)


@dataclass(frozen=True)
class TrainConfig:
    """Fitting settings shared by the closed-form and gradient paths.

    lambdas are fixed positive per-dimension loss weights (None means all
    ones). ridge_alpha only affects the closed form. hidden_dim, when set,
    adds a shared affine layer and forces the gradient path. fit_bias=False
    drops the intercept from the closed form (useful for hand-checked cases).
    """

    lambdas: Optional[tuple[float, ...]] = None
    ridge_alpha: float = 0.0
    lr: float = 0.05
    epochs: int = 200
    strategy: str = "equal"
    seed: int = 0
    hidden_dim: Optional[int] = None
    fit_bias: bool = True

    def __post_init__(self):
        if self.ridge_alpha < 0:
            raise ValueError("ridge_alpha must be nonnegative")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def resolved_lambdas(self, n_dims: int) -> np.ndarray:
        if self.lambdas is None:
            return np.ones(n_dims)
        lam = np.asarray(self.lambdas, dtype=np.float64)
        if lam.shape != (n_dims,):
            raise ValueError(f"lambdas must have {n_dims} entries, got shape {lam.shape}")
        if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
            raise ValueError("training lambdas must be positive and finite")
        return lam


@dataclass
class LossTable:
    """Per-sample, per-dimension squared-error losses 0.5 * r^2."""

    values: np.ndarray
    sample_ids: list[str]


def _resolve_weights(weights, n: int, k: int) -> np.ndarray:
    if weights is None:
        return np.ones((n, k))
    # accept a refine.WeightMatrix without importing it
    w = getattr(weights, "weights", weights)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n, k):
        raise ValueError(f"sample weights must have shape ({n}, {k}), got {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("sample weights must be nonnegative and finite")
    return w


def fit_closed_form(
    ds: Dataset, weights=None, config: TrainConfig | None = None
) -> RegressionHead:
    """Weighted ridge solution, one independent solve per dimension.

    Minimizes sum_i w_ik * 0.5 * (w_k . h_i + b_k - y_ik)^2 + 0.5 * alpha * |w_k|^2
    over augmented inputs [h; 1]; the bias coordinate is not penalized.
    Zero-weight samples drop out of the normal equations exactly. Positive
    per-dimension loss weights rescale each dimension's objective uniformly
    and therefore do not change the solution. With alpha = 0 a rank-deficient
    design raises NumericalError instead of returning an arbitrary solution.
    """
    cfg = config or TrainConfig()
    if cfg.hidden_dim is not None:
        raise ValueError("closed-form fitting supports head-only models; use fit_gd for a shared layer")
    n, k = len(ds), ds.n_dims
    cfg.resolved_lambdas(k)  # validate even though the solution ignores them
    w = _resolve_weights(weights, n, k)
    x = ds.features
    if cfg.fit_bias:
        xa = np.hstack([x, np.ones((n, 1))])
    else:
        xa = x
    p = xa.shape[1]
    reg = np.eye(p)
    if cfg.fit_bias:
        reg[-1, -1] = 0.0

    head_w = np.zeros((k, ds.feature_dim))
    head_b = np.zeros(k)
    for j in range(k):
        xw = xa * w[:, j][:, None]
        a = xa.T @ xw + cfg.ridge_alpha * reg
        rhs = xw.T @ ds.labels[:, j]
        if cfg.ridge_alpha == 0.0 and np.linalg.matrix_rank(a) < p:
            raise NumericalError(
                f"normal equations for dimension {j} are rank deficient at alpha=0; "
                "use a positive ridge_alpha or more effective samples"
            )
        try:
            beta = np.linalg.solve(a, rhs)
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"normal equations for dimension {j} are singular: {e}") from None
        if cfg.fit_bias:
            head_w[j] = beta[:-1]
            head_b[j] = beta[-1]
        else:
            head_w[j] = beta
            head_b[j] = 0.0
    info = {
        "method": "closed_form",
        "ridge_alpha": cfg.ridge_alpha,
        "weighted": weights is not None,
        "fit_bias": cfg.fit_bias,
    }
    return RegressionHead(weights=head_w, biases=head_b, fit_info=info)


class GDObjective:
    """Full-batch objective with per-dimension mean losses and analytic gradients.

    Parameters are packed into one flat vector:

        head only     [head weights (K*p), head biases (K)]
        shared layer  [shared weights (m*d), shared bias (m)] + head block

    per_dim_losses_and_grads returns L (K,) with
    L_k = (1/N) sum_i lambda_k w_ik 0.5 r_ik^2 and the (K, P) matrix of
    gradients dL_k/dtheta, so callers can combine dimensions with any weights.
    """

    def __init__(self, ds: Dataset, weights, lambdas: np.ndarray, hidden_dim: Optional[int]):
        self.x = ds.features
        self.y = ds.labels
        self.n, self.d = self.x.shape
        self.k = ds.n_dims
        self.hidden_dim = hidden_dim
        w = _resolve_weights(weights, self.n, self.k)
        self.coef = (np.asarray(lambdas)[None, :] * w) / self.n  # (N, K)
        p_head = hidden_dim if hidden_dim is not None else self.d
        self.p_head = p_head
        self.n_shared = 0 if hidden_dim is None else hidden_dim * self.d + hidden_dim
        self.n_params = self.n_shared + self.k * p_head + self.k

    def init_params(self, seed: int) -> np.ndarray:
        theta = np.zeros(self.n_params)
        if self.hidden_dim is not None:
            rng = np.random.default_rng([seed, 0])
            m = self.hidden_dim
            theta[: m * self.d + m] = 0.1 * rng.standard_normal(m * self.d + m)
        return theta

    def _unpack(self, theta: np.ndarray):
        if self.hidden_dim is None:
            shared_w = shared_b = None
            rest = theta
        else:
            m = self.hidden_dim
            shared_w = theta[: m * self.d].reshape(m, self.d)
            shared_b = theta[m * self.d : m * self.d + m]
            rest = theta[self.n_shared :]
        hw = rest[: self.k * self.p_head].reshape(self.k, self.p_head)
        hb = rest[self.k * self.p_head :]
        return shared_w, shared_b, hw, hb

    def to_head(self, theta: np.ndarray, fit_info: Optional[dict] = None) -> RegressionHead:
        shared_w, shared_b, hw, hb = self._unpack(theta)
        return RegressionHead(
            weights=hw.copy(),
            biases=hb.copy(),
            shared_weight=None if shared_w is None else shared_w.copy(),
            shared_bias=None if shared_b is None else shared_b.copy(),
            fit_info=fit_info,
        )

    def per_dim_losses(self, theta: np.ndarray) -> np.ndarray:
        shared_w, shared_b, hw, hb = self._unpack(theta)
        u = self.x if shared_w is None else self.x @ shared_w.T + shared_b
        r = u @ hw.T + hb - self.y
        return 0.5 * np.sum(self.coef * r * r, axis=0)

    def per_dim_losses_and_grads(self, theta: np.ndarray):
        shared_w, shared_b, hw, hb = self._unpack(theta)
        u = self.x if shared_w is None else self.x @ shared_w.T + shared_b
        r = u @ hw.T + hb - self.y  # (N, K)
        cr = self.coef * r  # (N, K)
        losses = 0.5 * np.sum(cr * r, axis=0)
        grads = np.zeros((self.k, self.n_params))
        off = self.n_shared
        ph = self.p_head
        for j in range(self.k):
            grads[j, off + j * ph : off + (j + 1) * ph] = cr[:, j] @ u
            grads[j, off + self.k * ph + j] = cr[:, j].sum()
        if shared_w is not None:
            m = self.hidden_dim
            sx = cr.T @ self.x  # (K, d), row j = sum_i cr_ij x_i
            sc = cr.sum(axis=0)  # (K,)
            for j in range(self.k):
                grads[j, : m * self.d] = np.outer(hw[j], sx[j]).ravel()
                grads[j, m * self.d : m * self.d + m] = hw[j] * sc[j]
        return losses, grads


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def fit_gd(ds: Dataset, weights=None, config: TrainConfig | None = None) -> RegressionHead:
    """Full-batch gradient descent on the weighted multi-dimension objective.

    Head parameters start at zero; a shared layer, when requested, starts from
    a small seeded gaussian. Strategies:

        equal        dimensions combined with the fixed lambdas
        uncertainty  per-dimension log-variances s_k (init 0) are learned
                     jointly, objective sum_k exp(-s_k) L_k + 0.5 s_k
        rlw          per-epoch dimension weights drawn as the softmax of K
                     seeded standard normals, multiplying the fixed lambdas

    The per-epoch loss trajectory is recorded in fit_info. A non-finite loss
    raises NumericalError naming the epoch.
    """
    cfg = config or TrainConfig()
    lam = cfg.resolved_lambdas(ds.n_dims)
    obj = GDObjective(ds, weights, lam, cfg.hidden_dim)
    theta = obj.init_params(cfg.seed)
    k = ds.n_dims
    s = np.zeros(k)
    rlw_rng = np.random.default_rng([cfg.seed, 1])
    history: list[float] = []

    for epoch in range(cfg.epochs):
        losses, grads = obj.per_dim_losses_and_grads(theta)
        if cfg.strategy == "equal":
            c = np.ones(k)
            total = float(losses.sum())
        elif cfg.strategy == "uncertainty":
            c = np.exp(-s)
            total = float(c @ losses + 0.5 * s.sum())
        else:  # rlw
            c = _softmax(rlw_rng.standard_normal(k))
            total = float(c @ losses)
        if not np.isfinite(total):
            raise NumericalError(f"training diverged: non-finite loss at epoch {epoch}")
        history.append(total)
        theta = theta - cfg.lr * (c @ grads)
        if cfg.strategy == "uncertainty":
            s = s - cfg.lr * (0.5 - c * losses)

    info = {
        "method": "gd",
        "strategy": cfg.strategy,
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "seed": cfg.seed,
        "loss_history": history,
    }
    if cfg.strategy == "uncertainty":
        info["log_vars"] = s.tolist()
    return obj.to_head(theta, fit_info=info)


def predict(head: RegressionHead, features: np.ndarray) -> np.ndarray:
    """All K predictions for one feature vector (or a batch of them)."""
    return head.predict(features)


def residuals(head: RegressionHead, ds: Dataset) -> np.ndarray:
    """(N, K) matrix of prediction minus label."""
    if ds.n_dims != head.n_dims:
        raise DataError(f"head has {head.n_dims} dimensions, dataset has {ds.n_dims}")
    if ds.feature_dim != head.feature_dim:
        raise DataError(f"head expects {head.feature_dim} features, dataset has {ds.feature_dim}")
    return head.predict_batch(ds.features) - ds.labels


def per_dim_loss(head: RegressionHead, ds: Dataset) -> LossTable:
    """Per-sample, per-dimension losses 0.5 * r^2 (no lambdas, no sample weights)."""
    r = residuals(head, ds)
    return LossTable(values=0.5 * r * r, sample_ids=ds.ids)
