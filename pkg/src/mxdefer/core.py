"""Label spaces, expert panels, finite distributions and the q-vector.

Labels are 0-based: classes are ``0..n-1`` and deferring to expert ``j`` is
label ``n + j``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PROB_TOL = 1e-12

MISCLASSIFICATION = "misclassification"
MISCLASSIFICATION_PLUS_BASE = "misclassification_plus_base"
COST_KINDS = (MISCLASSIFICATION, MISCLASSIFICATION_PLUS_BASE)


class InvalidScoreError(ValueError):
    pass


class UnknownPointError(KeyError):
    pass


class CostBoundError(ValueError):
    pass


@dataclass(frozen=True)
class LabelSpace:
    n: int
    n_e: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need at least 2 classes, got n={self.n}")
        if self.n_e < 1:
            raise ValueError(f"need at least 1 expert, got n_e={self.n_e}")

    @property
    def size(self) -> int:
        return self.n + self.n_e

    def expert_label(self, j: int) -> int:
        return self.n + j

    def is_deferral(self, label: int) -> bool:
        return label >= self.n


def predict_label(s) -> int:
    """Index of the largest score; ties go to the smallest index."""
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise InvalidScoreError(f"non-finite score vector: {s}")
    # np.argmax already returns the first maximum
    return int(np.argmax(s))


def predict_labels(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if not np.all(np.isfinite(S)):
        raise InvalidScoreError("non-finite entries in score matrix")
    return np.argmax(S, axis=-1)


@dataclass(frozen=True)
class FiniteDistribution:
    """A finite input set with marginal weights and exact class conditionals.

    ``features`` has one row per point; ``conditional[i]`` is p(x_i, .).
    """

    n: int
    ids: tuple
    features: np.ndarray
    marginal: np.ndarray
    conditional: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        feats = np.atleast_2d(np.asarray(self.features, dtype=float))
        marg = np.asarray(self.marginal, dtype=float)
        cond = np.atleast_2d(np.asarray(self.conditional, dtype=float))
        m = len(self.ids)
        if len(set(self.ids)) != m:
            raise ValueError("point ids must be distinct")
        if feats.shape[0] != m or marg.shape != (m,) or cond.shape != (m, self.n):
            raise ValueError(
                f"shape mismatch: {m} ids, features {feats.shape}, "
                f"marginal {marg.shape}, conditional {cond.shape} (n={self.n})"
            )
        if np.any(marg < 0) or abs(marg.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"marginal must be a probability vector (sum={marg.sum()!r})")
        if np.any(cond < 0) or np.any(np.abs(cond.sum(axis=1) - 1.0) > PROB_TOL):
            raise ValueError("every conditional must be a probability vector")
        for arr in (feats, marg, cond):
            arr.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "marginal", marg)
        object.__setattr__(self, "conditional", cond)
        object.__setattr__(self, "_index", {pid: i for i, pid in enumerate(self.ids)})

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self, x) -> int:
        try:
            return self._index[x]
        except KeyError:
            raise UnknownPointError(f"point {x!r} is not in the distribution") from None


@dataclass(frozen=True)
class ExpertPanel:
    """Expert costs c_j(x, y) tabulated over a finite input set.

    ``costs`` has shape (points, n, n_e). ``predictions`` (same shape, ints)
    is the label expert j outputs on the instance at point x whose true label
    is y; experts that only look at x have predictions constant along axis 1.
    """

    costs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    predictions: np.ndarray | None = None
    kinds: tuple | None = None
    betas: np.ndarray | None = None
    scale: float = 1.0

    def __post_init__(self):
        costs = np.asarray(self.costs, dtype=float)
        if costs.ndim != 3:
            raise ValueError(f"costs must be (points, n, n_e), got {costs.shape}")
        lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (costs.shape[2],)).copy()
        upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (costs.shape[2],)).copy()
        if np.any(lower > upper):
            raise ValueError("lower cost bound exceeds upper bound")
        if self.predictions is not None:
            preds = np.asarray(self.predictions, dtype=np.int64)
            if preds.shape != costs.shape:
                raise ValueError("predictions must match the cost table shape")
            preds.setflags(write=False)
            object.__setattr__(self, "predictions", preds)
        for arr in (costs, lower, upper):
            arr.setflags(write=False)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.betas is not None:
            object.__setattr__(self, "betas", np.asarray(self.betas, dtype=float))
        if self.kinds is not None:
            object.__setattr__(self, "kinds", tuple(self.kinds))

    @property
    def n_e(self) -> int:
        return self.costs.shape[2]

    @property
    def n(self) -> int:
        return self.costs.shape[1]

    @classmethod
    def from_predictions(cls, predictions, n: int, kinds=None, betas=None) -> "ExpertPanel":
        """Build cost type 1 / type 2 experts from their predicted labels.

        ``predictions`` is either (points, n_e), for experts that depend on
        x only, or (points, n, n_e).
        """
        preds = np.asarray(predictions, dtype=np.int64)
        if preds.ndim == 2:
            preds = np.repeat(preds[:, None, :], n, axis=1)
        if preds.ndim != 3 or preds.shape[1] != n:
            raise ValueError(f"bad prediction table shape {preds.shape} for n={n}")
        if np.any(preds < 0) or np.any(preds >= n):
            raise ValueError("expert predictions must be class labels in [0, n)")
        n_e = preds.shape[2]
        kinds = tuple(kinds) if kinds is not None else (MISCLASSIFICATION,) * n_e
        betas = np.zeros(n_e) if betas is None else np.asarray(betas, dtype=float)
        if len(kinds) != n_e or betas.shape != (n_e,):
            raise ValueError("need one kind and one beta per expert")
        for k, b in zip(kinds, betas):
            if k not in COST_KINDS:
                raise ValueError(f"unknown cost kind {k!r}; valid: {COST_KINDS}")
            if k == MISCLASSIFICATION and b != 0:
                raise ValueError("misclassification experts carry no base cost")
            if b < 0:
                raise ValueError("base costs must be nonnegative")
        y = np.arange(n)[None, :, None]
        costs = (preds != y).astype(float) + betas[None, None, :]
        return cls(costs, lower=betas, upper=1.0 + betas, predictions=preds, kinds=kinds, betas=betas)

    @classmethod
    def from_costs(cls, costs, lower=None, upper=None) -> "ExpertPanel":
        costs = np.asarray(costs, dtype=float)
        lower = costs.min(axis=(0, 1)) if lower is None else lower
        upper = costs.max(axis=(0, 1)) if upper is None else upper
        return cls(costs, lower=lower, upper=upper)

    def check_bounds(self, atol: float = 1e-12) -> None:
        lo = self.costs < self.lower[None, None, :] - atol
        hi = self.costs > self.upper[None, None, :] + atol
        if np.any(lo | hi):
            i, y, j = np.argwhere(lo | hi)[0]
            raise CostBoundError(
                f"cost c_{j}(x{i}, y={y}) = {self.costs[i, y, j]} outside "
                f"[{self.lower[j]}, {self.upper[j]}]"
            )

    def in_unit_interval(self) -> bool:
        return bool(np.all(self.lower >= 0) and np.all(self.upper <= 1))

    def for_bound_verification(self) -> "ExpertPanel":
        """Costs rescaled by 1 / max_j(1 + beta_j) so they lie in [0, 1].

        Panels already inside [0, 1] are returned unchanged.
        """
        if self.in_unit_interval():
            return self
        top = float(self.upper.max())
        return ExpertPanel(
            self.costs / top,
            lower=self.lower / top,
            upper=self.upper / top,
            predictions=self.predictions,
            kinds=self.kinds,
            betas=self.betas,
            scale=self.scale / top,
        )

    def cost(self, point_index: int, y: int, j: int) -> float:
        return float(self.costs[point_index, y, j])


@dataclass(frozen=True)
class QVector:
    q: np.ndarray
    Q: float
    q_bar: np.ndarray


def q_matrix(d: FiniteDistribution, panel: ExpertPanel) -> np.ndarray:
    """q(x, .) for every point at once, shape (points, n + n_e)."""
    if panel.costs.shape[:2] != (len(d), d.n):
        raise ValueError(
            f"panel tabulated over {panel.costs.shape[:2]}, distribution is {(len(d), d.n)}"
        )
    expected_cost = np.einsum("iy,iyj->ij", d.conditional, panel.costs)
    return np.concatenate([d.conditional, 1.0 - expected_cost], axis=1)


def build_q_vector(d: FiniteDistribution, panel: ExpertPanel, x) -> QVector:
    i = d.index_of(x)
    panel.check_bounds()
    p = d.conditional[i]
    q = np.concatenate([p, 1.0 - p @ panel.costs[i]])
    Q = float(q.sum())
    return QVector(q=q, Q=Q, q_bar=q / Q)


def reachable_labels(model_class, x=None) -> frozenset:
    """Labels attainable as argmax by some hypothesis of the class at x.

    Every shipped class (free-bias linear, bounded scores, two-layer
    perceptron, all measurable) can realise any argmax.
    """
    size = model_class.size if hasattr(model_class, "size") else int(model_class)
    return frozenset(range(size))


# -- serialization --------------------------------------------------------


def _jsonable_id(pid):
    return pid.item() if isinstance(pid, np.generic) else pid


def distribution_to_dict(d: FiniteDistribution, panel: ExpertPanel) -> dict:
    if panel.predictions is None:
        raise ValueError("only prediction-backed panels serialize")
    n_e = panel.n_e
    experts = []
    for j in range(n_e):
        preds = {}
        for i, pid in enumerate(d.ids):
            row = panel.predictions[i, :, j]
            preds[str(pid)] = int(row[0]) if np.all(row == row[0]) else [int(v) for v in row]
        experts.append(
            {
                "kind": panel.kinds[j] if panel.kinds else MISCLASSIFICATION,
                "beta": float(panel.betas[j]) if panel.betas is not None else 0.0,
                "predictions": preds,
            }
        )
    doc = {
        "n": d.n,
        "n_e": n_e,
        "points": [
            {
                "id": _jsonable_id(pid),
                "features": d.features[i].tolist(),
                "weight": float(d.marginal[i]),
                "conditional": d.conditional[i].tolist(),
            }
            for i, pid in enumerate(d.ids)
        ],
        "experts": experts,
    }
    if panel.scale != 1.0:
        # rescaled (bound-verification) panels keep their factor
        doc["cost_scale"] = float(panel.scale)
    return doc


def distribution_from_dict(doc: dict) -> tuple[FiniteDistribution, ExpertPanel]:
    n, n_e = int(doc["n"]), int(doc["n_e"])
    pts = doc["points"]
    d = FiniteDistribution(
        n=n,
        ids=[p["id"] for p in pts],
        features=[p["features"] for p in pts],
        marginal=[p["weight"] for p in pts],
        conditional=[p["conditional"] for p in pts],
    )
    if len(doc["experts"]) != n_e:
        raise ValueError(f"expected {n_e} experts, found {len(doc['experts'])}")
    preds = np.empty((len(d), n, n_e), dtype=np.int64)
    for j, e in enumerate(doc["experts"]):
        table = e["predictions"]
        for i, pid in enumerate(d.ids):
            preds[i, :, j] = table[str(pid)]
    panel = ExpertPanel.from_predictions(
        preds, n, kinds=[e["kind"] for e in doc["experts"]], betas=[e.get("beta", 0.0) for e in doc["experts"]]
    )
    scale = float(doc.get("cost_scale", 1.0))
    if scale != 1.0:
        # the factor is implied by the betas; redoing the rescale keeps it bit-exact
        panel = panel.for_bound_verification()
        if panel.scale != scale:
            raise ValueError(f"cost_scale {scale} does not match the experts' base costs")
    return d, panel


def save_distribution(path, d: FiniteDistribution, panel: ExpertPanel) -> None:
    # repr-based float output in json round-trips doubles exactly
    Path(path).write_text(json.dumps(distribution_to_dict(d, panel), indent=1))


def load_distribution(path) -> tuple[FiniteDistribution, ExpertPanel]:
    return distribution_from_dict(json.loads(Path(path).read_text()))


def random_distribution(
    rng: np.random.Generator,
    n: int,
    n_e: int,
    n_points: int,
    input_dim: int = 2,
    kinds: Sequence[str] | None = None,
    betas: Iterable[float] | None = None,
    latent_experts: bool = False,
) -> tuple[FiniteDistribution, ExpertPanel]:
    """Random finite distribution with random prediction-backed experts."""
    marg = rng.dirichlet(np.ones(n_points))
    # dirichlet can underflow to exact zeros; keep it a probability vector
    marg = marg / marg.sum()
    cond = rng.dirichlet(np.full(n, 0.7), size=n_points)
    cond = cond / cond.sum(axis=1, keepdims=True)
    d = FiniteDistribution(
        n=n,
        ids=list(range(n_points)),
        features=rng.normal(size=(n_points, input_dim)),
        marginal=marg,
        conditional=cond,
    )
    shape = (n_points, n, n_e) if latent_experts else (n_points, n_e)
    preds = rng.integers(0, n, size=shape)
    panel = ExpertPanel.from_predictions(preds, n, kinds=kinds, betas=betas)
    return d, panel
