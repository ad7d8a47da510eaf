"""Score models, a mini-batch trainer for the deferral surrogate, synthetic
Gaussian-mixture tasks with configurable experts, and system evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    MISCLASSIFICATION, MISCLASSIFICATION_PLUS_BASE, ExpertPanel, FiniteDistribution, q_matrix,
)
from .losses import SurrogateSpec, parse_spec, surrogate_weights, weighted_loss_grad

log = logging.getLogger(__name__)


class TrainingDivergence(FloatingPointError):
    pass


class TaskConfigError(ValueError):
    pass


# -- models -----------------------------------------------------------------


@dataclass
class ScoreModel:
    """Linear or two-layer ReLU perceptron mapping features to n + n_e scores."""

    architecture: str
    input_dim: int
    output_dim: int
    hidden_dim: int | None = None
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, architecture: str, input_dim: int, output_dim: int, hidden_dim: int = 64,
             seed: int = 0) -> "ScoreModel":
        rng = np.random.default_rng(seed)

        def uni(fan_in, shape):
            r = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-r, r, size=shape)

        if architecture == "linear":
            params = {"W": uni(input_dim, (input_dim, output_dim)), "b": uni(input_dim, (output_dim,))}
            hidden_dim = None
        elif architecture == "mlp2":
            params = {
                "W1": uni(input_dim, (input_dim, hidden_dim)),
                "b1": uni(input_dim, (hidden_dim,)),
                "W2": uni(hidden_dim, (hidden_dim, output_dim)),
                "b2": uni(hidden_dim, (output_dim,)),
            }
        else:
            raise ValueError(f"unknown architecture {architecture!r}; use 'linear' or 'mlp2'")
        return cls(architecture, input_dim, output_dim, hidden_dim, params)

    def copy(self) -> "ScoreModel":
        return ScoreModel(self.architecture, self.input_dim, self.output_dim, self.hidden_dim,
                          {k: v.copy() for k, v in self.params.items()})

    def forward(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = self.params
        if self.architecture == "linear":
            return X @ p["W"] + p["b"]
        H = np.maximum(X @ p["W1"] + p["b1"], 0.0)
        return H @ p["W2"] + p["b2"]

    def forward_backward(self, X, grad_fn):
        """Scores, then parameter gradients of the scalar whose score gradient
        ``grad_fn(S)`` returns as ``(value, dS)``."""
        p = self.params
        if self.architecture == "linear":
            S = X @ p["W"] + p["b"]
            val, dS = grad_fn(S)
            return val, {"W": X.T @ dS, "b": dS.sum(axis=0)}
        Z = X @ p["W1"] + p["b1"]
        H = np.maximum(Z, 0.0)
        S = H @ p["W2"] + p["b2"]
        val, dS = grad_fn(S)
        dH = (dS @ p["W2"].T) * (Z > 0)
        return val, {"W1": X.T @ dH, "b1": dH.sum(axis=0), "W2": H.T @ dS, "b2": dS.sum(axis=0)}

    def output_keys(self):
        return ("W", "b") if self.architecture == "linear" else ("W2", "b2")

    def center_outputs(self):
        """Make every score vector sum to zero by centring the output layer."""
        for k in self.output_keys():
            self.params[k] -= self.params[k].mean(axis=-1, keepdims=True)

    def param_norm(self) -> float:
        return float(np.sqrt(sum((v ** 2).sum() for v in self.params.values())))

    def clip_norm(self, radius: float):
        """Rescale all parameters onto the ball of the given Euclidean radius."""
        nrm = self.param_norm()
        if nrm > radius:
            for v in self.params.values():
                v *= radius / nrm

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "dims": {"input": self.input_dim, "hidden": self.hidden_dim, "output": self.output_dim},
            "weights": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                        for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScoreModel":
        dims = doc["dims"]
        params = {k: np.array(v["values"], dtype=float).reshape(v["shape"]) for k, v in doc["weights"].items()}
        return cls(doc["architecture"], dims["input"], dims["output"], dims.get("hidden"), params)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ScoreModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- data -------------------------------------------------------------------


@dataclass
class Dataset:
    """Labelled sample with expert costs and predictions precomputed per row."""

    X: np.ndarray
    y: np.ndarray
    costs: np.ndarray
    expert_predictions: np.ndarray
    point_index: np.ndarray | None = None

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        pi = None if self.point_index is None else self.point_index[idx]
        return Dataset(self.X[idx], self.y[idx], self.costs[idx], self.expert_predictions[idx], pi)


def sample_dataset(d: FiniteDistribution, panel: ExpertPanel, m: int, rng: np.random.Generator) -> Dataset:
    """i.i.d. draws (x, y) from a finite distribution, with the expert columns filled in."""
    idx = rng.choice(len(d), size=m, p=d.marginal)
    u = rng.random(m)
    cdf = np.cumsum(d.conditional[idx], axis=1)
    y = np.minimum((u[:, None] > cdf).sum(axis=1), d.n - 1)
    preds = panel.predictions[idx, y] if panel.predictions is not None else np.full((m, panel.n_e), -1)
    return Dataset(d.features[idx], y, panel.costs[idx, y], preds, idx)


# -- synthetic tasks ----------------------------------------------------------


@dataclass
class SyntheticTaskSpec:
    """Gaussian-mixture task on a finite support with a panel of experts.

    Expert profiles are dicts, either ``{"accuracy": a}`` (always right on a
    half-space holding mass ``a``, a random wrong class elsewhere) or
    ``{"domain": [classes], "in_domain_accuracy": a}`` (right with
    probability ``a`` when the true class is in the domain, uniformly random
    otherwise). Experts see the instance, so their output may depend on the
    true label as well as on x.
    """

    n: int = 3
    input_dim: int = 2
    means: list | None = None
    radius: float = 2.0
    scale: float = 1.0
    label_noise: float = 0.0
    expert_profiles: list = field(default_factory=lambda: [{"accuracy": 0.9}])
    cost_kind: int = 1
    betas: list | None = None
    support_size: int = 2000
    test_size: int = 4000

    @property
    def n_e(self) -> int:
        return len(self.expert_profiles)

    def validate(self):
        if self.n < 2:
            raise TaskConfigError("n must be at least 2")
        if not self.scale > 0:
            raise TaskConfigError("cluster scale must be positive")
        if not 0.0 <= self.label_noise < 0.5:
            raise TaskConfigError("label_noise must lie in [0, 0.5)")
        if self.cost_kind not in (1, 2):
            raise TaskConfigError("cost_kind must be 1 or 2")
        if self.n_e < 1:
            raise TaskConfigError("need at least one expert profile")
        if self.betas is not None and len(self.betas) != self.n_e:
            raise TaskConfigError("need one beta per expert")
        for prof in self.expert_profiles:
            if "accuracy" in prof:
                if not 0.0 <= prof["accuracy"] <= 1.0:
                    raise TaskConfigError("expert accuracy must lie in [0, 1]")
            elif "domain" in prof:
                if not 0.0 <= prof.get("in_domain_accuracy", 1.0) <= 1.0:
                    raise TaskConfigError("in_domain_accuracy must lie in [0, 1]")
                if any(not 0 <= c < self.n for c in prof["domain"]):
                    raise TaskConfigError("expert domain classes must lie in [0, n)")
            else:
                raise TaskConfigError(f"expert profile needs 'accuracy' or 'domain': {prof}")

    def cluster_means(self) -> np.ndarray:
        if self.means is not None:
            mu = np.asarray(self.means, dtype=float)
            if mu.shape != (self.n, self.input_dim):
                raise TaskConfigError(f"means must have shape {(self.n, self.input_dim)}")
            return mu
        ang = 2 * np.pi * np.arange(self.n) / self.n
        mu = np.zeros((self.n, self.input_dim))
        mu[:, 0] = self.radius * np.cos(ang)
        if self.input_dim > 1:
            mu[:, 1] = self.radius * np.sin(ang)
        return mu


def _expert_table(prof, X, n, marginal, rng):
    """Predictions (points, n) of one expert for each (x, true label)."""
    m = len(X)
    y = np.broadcast_to(np.arange(n), (m, n))
    # a random label different from y, for "wrong" outputs
    wrong = (y + rng.integers(1, n, size=(m, n))) % n
    if "accuracy" in prof:
        a = prof["accuracy"]
        u = rng.normal(size=X.shape[1])
        proj = X @ (u / np.linalg.norm(u))
        order = np.argsort(proj, kind="stable")
        covered = np.zeros(m, dtype=bool)
        covered[order[np.cumsum(marginal[order]) <= a + 1e-12]] = True
        return np.where(covered[:, None], y, wrong)
    a = prof.get("in_domain_accuracy", 1.0)
    dom = np.isin(np.arange(n), prof["domain"])[None, :]
    hit = rng.random((m, n)) < a
    rand = rng.integers(0, n, size=(m, n))
    return np.where(dom, np.where(hit, y, wrong), rand)


def build_task_distribution(spec: SyntheticTaskSpec, seed: int) -> tuple[FiniteDistribution, ExpertPanel]:
    spec.validate()
    rng = np.random.default_rng(seed)
    mu = spec.cluster_means()
    comp = rng.integers(0, spec.n, size=spec.support_size)
    X = mu[comp] + spec.scale * rng.normal(size=(spec.support_size, spec.input_dim))
    logp = -0.5 * ((X[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2) / spec.scale ** 2
    post = np.exp(logp - logp.max(axis=1, keepdims=True))
    post /= post.sum(axis=1, keepdims=True)
    cond = (1.0 - spec.label_noise) * post + spec.label_noise / spec.n
    cond /= cond.sum(axis=1, keepdims=True)
    marg = np.full(spec.support_size, 1.0 / spec.support_size)
    d = FiniteDistribution(n=spec.n, ids=list(range(spec.support_size)), features=X,
                           marginal=marg, conditional=cond)
    tables = [_expert_table(p, X, spec.n, marg, rng) for p in spec.expert_profiles]
    preds = np.stack(tables, axis=2)
    if spec.cost_kind == 1:
        kinds, betas = [MISCLASSIFICATION] * spec.n_e, None
    else:
        kinds = [MISCLASSIFICATION_PLUS_BASE] * spec.n_e
        betas = spec.betas if spec.betas is not None else [0.0] * spec.n_e
    return d, ExpertPanel.from_predictions(preds, spec.n, kinds=kinds, betas=betas)


def generate_task(spec: SyntheticTaskSpec, m: int, seed: int):
    """(train set, test set, finite distribution, expert panel)."""
    if m < 1:
        raise TaskConfigError("sample size must be positive")
    d, panel = build_task_distribution(spec, seed)
    rng = np.random.default_rng([seed, 1])
    train = sample_dataset(d, panel, m, rng)
    test = sample_dataset(d, panel, spec.test_size, np.random.default_rng([seed, 2]))
    return train, test, d, panel


# -- training -----------------------------------------------------------------


@dataclass
class TrainConfig:
    spec: SurrogateSpec = field(default_factory=lambda: parse_spec("log"))
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    seed: int = 0
    constraint_projection: bool = False
    lr_schedule: str = "constant"
    max_param_norm: float | None = None

    def validate(self):
        if self.constraint_projection != self.spec.constrained:
            raise ValueError("constraint_projection must be set exactly for constrained losses")
        if self.max_param_norm is not None and not self.max_param_norm > 0:
            raise ValueError("max_param_norm must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}; use 'constant' or 'cosine'")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("epochs, batch_size, learning_rate and weight_decay must be nonnegative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["spec"] = self.spec.token
        out["adam_betas"] = list(self.adam_betas)
        return out


class _Adam:
    def __init__(self, params, lr, betas, eps):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _sgd_step(params, grads, lr):
    for k, g in grads.items():
        params[k] -= lr * g


def _objective(spec, W, sign=None):
    n_rows = W.shape[0]

    def fn(S):
        L, G = weighted_loss_grad(spec, S, W)
        if sign is not None:
            L, G = L * sign, G * sign[:, None]
        return L.mean(), G / n_rows

    return fn


def mean_surrogate(model: ScoreModel, data: Dataset, spec: SurrogateSpec) -> float:
    n = model.output_dim - data.costs.shape[1]
    W = surrogate_weights(data.y, data.costs, n)
    return float(weighted_loss_grad(spec, model.forward(data.X), W)[0].mean())


def train(model: ScoreModel, data: Dataset, panel: ExpertPanel | None, cfg: TrainConfig, sign=None):
    """Mini-batch minimisation of the mean surrogate; returns (model, loss curve).

    The curve holds the full-sample mean surrogate before training and after
    every epoch. Expert costs come precomputed with ``data``; ``panel``, when
    given, is only checked for consistency. ``sign`` multiplies each row's
    loss (used for Rademacher ascent). The input model is not modified.
    """
    cfg.validate()
    if len(data) == 0:
        raise ValueError("empty training set")
    if panel is not None and panel.n_e != data.costs.shape[1]:
        raise ValueError("panel and data disagree on the number of experts")
    model = model.copy()
    if cfg.constraint_projection:
        model.center_outputs()
    if cfg.max_param_norm is not None:
        model.clip_norm(cfg.max_param_norm)
    n = model.output_dim - data.costs.shape[1]
    W_all = surrogate_weights(data.y, data.costs, n)
    rng = np.random.default_rng([cfg.seed, 7])
    opt = _Adam(model.params, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps) if cfg.optimizer == "adam" else None

    def full_loss():
        L = weighted_loss_grad(cfg.spec, model.forward(data.X), W_all)[0]
        return float((L if sign is None else L * sign).mean())

    curve = [full_loss()]
    m = len(data)
    total = cfg.epochs * -(-m // cfg.batch_size)
    batch = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(m)
        for start in range(0, m, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            fn = _objective(cfg.spec, W_all[idx], None if sign is None else sign[idx])
            val, grads = model.forward_backward(data.X[idx], fn)
            if not np.isfinite(val):
                raise TrainingDivergence(
                    f"non-finite loss at batch {batch} (parameter norm {model.param_norm():.4g})"
                )
            if cfg.weight_decay:
                for k in grads:
                    grads[k] = grads[k] + cfg.weight_decay * model.params[k]
            lr = cfg.learning_rate
            if cfg.lr_schedule == "cosine":
                lr *= 0.5 * (1.0 + np.cos(np.pi * batch / total))
            if opt is not None:
                opt.lr = lr
                opt.step(model.params, grads)
            else:
                _sgd_step(model.params, grads, lr)
            if cfg.constraint_projection:
                model.center_outputs()
            if cfg.max_param_norm is not None:
                model.clip_norm(cfg.max_param_norm)
            batch += 1
        curve.append(full_loss())
    return model, np.array(curve)


# -- evaluation ---------------------------------------------------------------


@dataclass
class SystemEvaluation:
    system_accuracy: float
    deferral_ratios: np.ndarray
    per_class_routing: np.ndarray
    classifier_accuracy: float

    def to_dict(self) -> dict:
        return {
            "system_accuracy": self.system_accuracy,
            "classifier_accuracy": self.classifier_accuracy,
            "deferral_ratios": self.deferral_ratios.tolist(),
            "per_class_routing": self.per_class_routing.tolist(),
        }


def evaluate_system(model: ScoreModel, test: Dataset, panel: ExpertPanel,
                    allow_deferral: bool = True) -> SystemEvaluation:
    """System accuracy and routing statistics on a labelled test set.

    Routing columns are (predictor, expert 1, ..., expert n_e); row c of
    ``per_class_routing`` is conditioned on true class c.
    """
    if len(test) == 0:
        raise ValueError("empty test set")
    n = panel.n
    S = model.forward(test.X)
    n_e = S.shape[1] - n
    h = np.argmax(S if allow_deferral else S[:, :n], axis=1)
    deferred = h >= n
    decision = h.copy()
    decision[deferred] = test.expert_predictions[deferred, h[deferred] - n]
    route = np.where(deferred, h - n + 1, 0)
    ratios = np.bincount(route, minlength=n_e + 1) / len(test)
    routing = np.zeros((n, n_e + 1))
    for c in range(n):
        sel = test.y == c
        if sel.any():
            routing[c] = np.bincount(route[sel], minlength=n_e + 1) / sel.sum()
    cls_pred = np.argmax(S[:, :n], axis=1)
    return SystemEvaluation(
        system_accuracy=float((decision == test.y).mean()),
        deferral_ratios=ratios,
        per_class_routing=routing,
        classifier_accuracy=float((cls_pred == test.y).mean()),
    )


def deferral_regret(model: ScoreModel, d: FiniteDistribution, panel: ExpertPanel) -> tuple[float, float]:
    """(expected deferral loss of the model, Bayes deferral loss) on ``d``."""
    Qm = q_matrix(d, panel)
    h = np.argmax(model.forward(d.features), axis=1)
    w = d.marginal
    return float(w @ (1.0 - Qm[np.arange(len(d)), h])), float(w @ (1.0 - Qm.max(axis=1)))
