"""Deferral loss, the score-based surrogate family and its Gamma transforms."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import ExpertPanel, InvalidScoreError, LabelSpace, predict_label

DEFAULT_ALPHA = 0.7
DEFAULT_RHO = 1.0
CONSTRAINT_TOL = 1e-6

FAMILIES = {
    "comp_sum": ("exp", "log", "gce", "mae"),
    "sum": ("sq", "exp", "rho"),
    "constrained": ("hinge", "sq", "exp", "rho"),
}

_CODES = {
    ("comp_sum", "exp"): kernels.COMP_EXP,
    ("comp_sum", "log"): kernels.COMP_LOG,
    ("comp_sum", "gce"): kernels.COMP_GCE,
    ("comp_sum", "mae"): kernels.COMP_MAE,
    ("sum", "sq"): kernels.SUM_SQ,
    ("sum", "exp"): kernels.SUM_EXP,
    ("sum", "rho"): kernels.SUM_RHO,
    ("constrained", "hinge"): kernels.CSTND_HINGE,
    ("constrained", "sq"): kernels.CSTND_SQ,
    ("constrained", "exp"): kernels.CSTND_EXP,
    ("constrained", "rho"): kernels.CSTND_RHO,
}

# short tokens used by configs and the CLI
_TOKENS = {
    "exp": ("comp_sum", "exp"),
    "log": ("comp_sum", "log"),
    "gce": ("comp_sum", "gce"),
    "mae": ("comp_sum", "mae"),
    "sum_sq": ("sum", "sq"),
    "sum_exp": ("sum", "exp"),
    "sum_rho": ("sum", "rho"),
    "cstnd_hinge": ("constrained", "hinge"),
    "cstnd_sq": ("constrained", "sq"),
    "cstnd_exp": ("constrained", "exp"),
    "cstnd_rho": ("constrained", "rho"),
}
VALID_TOKENS = tuple(_TOKENS)


class InvalidLabelError(ValueError):
    pass


class ConstraintError(ValueError):
    pass


class SpecParseError(ValueError):
    pass


@dataclass(frozen=True)
class SurrogateSpec:
    family: str
    variant: str
    alpha: float | None = None
    rho: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecParseError(f"unknown family {self.family!r}; valid: {sorted(FAMILIES)}")
        if self.variant not in FAMILIES[self.family]:
            raise SpecParseError(
                f"variant {self.variant!r} not in family {self.family!r}; valid: {FAMILIES[self.family]}"
            )
        if self.variant == "gce":
            a = DEFAULT_ALPHA if self.alpha is None else float(self.alpha)
            if not 0.0 < a <= 1.0:
                raise SpecParseError(f"gce alpha must lie in (0, 1], got {a}")
            object.__setattr__(self, "alpha", a)
        elif self.alpha is not None:
            raise SpecParseError("alpha only applies to the gce variant")
        if self.variant == "rho":
            r = DEFAULT_RHO if self.rho is None else float(self.rho)
            if r <= 0:
                raise SpecParseError(f"rho must be positive, got {r}")
            object.__setattr__(self, "rho", r)
        elif self.rho is not None:
            raise SpecParseError("rho only applies to rho-margin variants")

    @property
    def code(self) -> int:
        return _CODES[(self.family, self.variant)]

    @property
    def constrained(self) -> bool:
        return self.family == "constrained"

    @property
    def token(self) -> str:
        for tok, fv in _TOKENS.items():
            if fv == (self.family, self.variant):
                if self.variant == "gce" and self.alpha != DEFAULT_ALPHA:
                    return f"{tok}:{self.alpha!r}"
                if self.variant == "rho" and self.rho != DEFAULT_RHO:
                    return f"{tok}:{self.rho!r}"
                return tok
        raise AssertionError("unreachable")

    def _params(self):
        return (self.alpha or 1.0, self.rho or 1.0)

    def __str__(self):
        return self.token


def parse_spec(token: str) -> SurrogateSpec:
    """Parse ``log``, ``gce:0.5``, ``sum_rho:2`` and friends."""
    name, _, param = str(token).strip().partition(":")
    if name not in _TOKENS:
        raise SpecParseError(f"unknown loss token {token!r}; valid tokens: {', '.join(VALID_TOKENS)}")
    family, variant = _TOKENS[name]
    kw = {}
    if param:
        if variant == "gce":
            kw["alpha"] = float(param)
        elif variant == "rho":
            kw["rho"] = float(param)
        else:
            raise SpecParseError(f"loss {name!r} takes no parameter")
    return SurrogateSpec(family, variant, **kw)


ALL_SPECS = tuple(parse_spec(t) for t in VALID_TOKENS)


@dataclass(frozen=True)
class GammaTransform:
    """Gamma(t) = coefficient * t (linear) or sqrt(coefficient * t)."""

    shape: str
    coefficient: float

    @property
    def removes_constants(self) -> bool:
        return self.shape == "linear"

    def __call__(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        out = self.coefficient * t if self.shape == "linear" else np.sqrt(self.coefficient * t)
        return float(out) if out.ndim == 0 else out

    def bound(self, eps: float, n_e: int, sum_lower: float, sum_upper: float) -> float:
        """Right-hand side of the consistency bound for surrogate excess ``eps``."""
        if self.removes_constants:
            return self(eps)
        return (n_e + 1 - sum_lower) * self(eps / (n_e + 1 - sum_upper))

    def simplified_bound(self, eps: float, n_e: int) -> float:
        """Cost-free form, valid because 1 <= n_e + 1 - sum(c) <= n_e + 1."""
        if self.removes_constants:
            return self(eps)
        return (n_e + 1) * self(eps)


def gamma_of(spec: SurrogateSpec, space: LabelSpace, classes: str = "augmented") -> GammaTransform:
    """Gamma transform of the base loss, seen as an (n + n_e)-class loss.

    The gce and mae coefficients depend on the number of classes the base
    loss is applied to. ``classes="augmented"`` uses n + n_e, which is the
    label set the base loss actually scores; ``classes="base"`` uses n.
    """
    if classes not in ("augmented", "base"):
        raise ValueError("classes must be 'augmented' or 'base'")
    k = space.size if classes == "augmented" else space.n
    v = spec.variant
    if spec.family == "comp_sum":
        if v in ("exp", "log"):
            return GammaTransform("sqrt", 2.0)
        if v == "gce":
            return GammaTransform("sqrt", 2.0 * k ** spec.alpha)
        return GammaTransform("linear", float(k))
    if v == "sq":
        return GammaTransform("sqrt", 1.0)
    if v == "exp":
        return GammaTransform("sqrt", 2.0)
    return GammaTransform("linear", 1.0)


# -- scalar API -------------------------------------------------------------


def _scores(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 1 or not np.all(np.isfinite(s)):
        raise InvalidScoreError(f"scores must be a finite vector, got {s}")
    return s


def _expert_costs(panel, x, y):
    if isinstance(panel, ExpertPanel):
        if x is None:
            raise ValueError("an ExpertPanel needs the point index x")
        _check_class_label(y, panel.n)
        return panel.costs[x, y]
    return np.asarray(panel, dtype=float)


def _check_class_label(y, n):
    if not (0 <= int(y) < n) or int(y) != y:
        raise InvalidLabelError(f"class label {y!r} outside [0, {n})")


def deferral_loss(s, y: int, panel, x=None) -> float:
    """Zero-one loss when predicting, expert j's cost when deferring to it.

    ``panel`` is an ExpertPanel (with point index ``x``) or the vector of
    per-expert costs c_j(x, y) directly.
    """
    s = _scores(s)
    c = _expert_costs(panel, x, y)
    n = s.size - c.size
    _check_class_label(y, n)
    h = predict_label(s)
    return float(h != y) if h < n else float(c[h - n])


def project_constraint(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return s - s.mean(axis=-1, keepdims=True)


def _check_constraint(spec, S):
    if spec.constrained:
        bad = np.abs(S.sum(axis=-1)) > CONSTRAINT_TOL
        if np.any(bad):
            raise ConstraintError(
                f"constrained losses need zero-sum scores; row sums {S.sum(axis=-1)[bad][:3]}"
            )


def weighted_loss_grad(spec: SurrogateSpec, S, W):
    """Batched sum_k W[b, k] * ell(S[b], k) and its gradient in S."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    _check_constraint(spec, S)
    alpha, rho = spec._params()
    L, G, clamped = kernels.weighted_loss_grad(spec.code, alpha, rho, S, W)
    if clamped:
        warnings.warn(f"{clamped} exponent(s) clamped at {kernels.EXP_CLAMP}", RuntimeWarning, stacklevel=3)
    return L, G


def base_loss(spec: SurrogateSpec, s, y: int) -> float:
    s = _scores(s)
    if not 0 <= y < s.size:
        raise InvalidLabelError(f"label {y} outside [0, {s.size})")
    w = np.zeros_like(s)
    w[y] = 1.0
    return float(weighted_loss_grad(spec, s, w)[0][0])


def surrogate_weights(y, costs, n: int) -> np.ndarray:
    """Weights on the base loss: 1 on the true class, 1 - c_j on label n + j.

    ``y`` is an int or an array of labels; ``costs`` is (n_e,) or (B, n_e).
    """
    y = np.atleast_1d(np.asarray(y))
    C = np.atleast_2d(np.asarray(costs, dtype=float))
    B, n_e = C.shape
    if np.any((y < 0) | (y >= n)):
        raise InvalidLabelError(f"class labels must lie in [0, {n})")
    W = np.zeros((B, n + n_e))
    W[np.arange(B), y] = 1.0
    W[:, n:] = 1.0 - C
    return W


def surrogate_loss(spec: SurrogateSpec, s, y: int, panel, x=None) -> float:
    s = _scores(s)
    c = _expert_costs(panel, x, y)
    n = s.size - c.size
    _check_class_label(y, n)
    return float(weighted_loss_grad(spec, s, surrogate_weights(y, c, n))[0][0])


def surrogate_gradient(spec: SurrogateSpec, s, y: int, panel, x=None) -> np.ndarray:
    s = _scores(s)
    c = _expert_costs(panel, x, y)
    n = s.size - c.size
    _check_class_label(y, n)
    return weighted_loss_grad(spec, s, surrogate_weights(y, c, n))[1][0]


def deferral_losses(S, y, C) -> np.ndarray:
    """Vectorised deferral loss over a batch of score rows."""
    S = np.atleast_2d(S)
    y = np.asarray(y)
    C = np.atleast_2d(C)
    n = S.shape[1] - C.shape[1]
    h = np.argmax(S, axis=1)
    out = (h != y).astype(float)
    defer = h >= n
    out[defer] = C[defer, h[defer] - n]
    return out


__all__ = [
    "ALL_SPECS", "ConstraintError", "GammaTransform", "InvalidLabelError", "SpecParseError",
    "SurrogateSpec", "VALID_TOKENS", "base_loss", "deferral_loss", "deferral_losses",
    "gamma_of", "parse_spec", "project_constraint", "surrogate_gradient", "surrogate_loss",
    "surrogate_weights", "weighted_loss_grad",
]
