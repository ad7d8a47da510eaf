"""Exact regret analysis on finite distributions.

Conditional regrets of the deferral loss and of the surrogates, pointwise
infima over the shipped hypothesis classes, minimizability gaps,
approximation errors and two-sided evaluation of the consistency and
learning bounds.

Both shipped classes (all measurable functions and functions with scores in
[-lam, lam]) constrain each input independently, so on a finite support the
best-in-class risk is the expectation of the pointwise infima and every
minimizability gap is zero. The approximation error of the bounded class is
not.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from . import kernels
from .core import ExpertPanel, FiniteDistribution, LabelSpace, QVector, q_matrix
from .losses import SurrogateSpec, gamma_of, weighted_loss_grad

BOUND_TOL = 1e-9


class OptimizationFailure(RuntimeError):
    def __init__(self, message, best_value):
        super().__init__(message)
        self.best_value = best_value


class CostModeError(ValueError):
    pass


@dataclass(frozen=True)
class HypothesisClassSpec:
    kind: str = "all_measurable"
    lam: float | None = None

    def __post_init__(self):
        if self.kind == "all_measurable":
            if self.lam is not None:
                raise ValueError("all_measurable takes no score bound")
        elif self.kind == "bounded_scores":
            if self.lam is None or not self.lam > 0:
                raise ValueError("bounded_scores needs a positive lam")
        else:
            raise ValueError(f"unknown hypothesis class {self.kind!r}")

    @property
    def bound(self) -> float:
        return math.inf if self.lam is None else float(self.lam)

    def contains(self, s, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(np.asarray(s)) <= self.bound + tol))


ALL_MEASURABLE = HypothesisClassSpec()


@dataclass(frozen=True)
class MinimizerSettings:
    restarts: int = 20
    steps: int = 2000
    step_size: float = 0.1
    tol: float = 1e-9
    seed: int = 0


# -- deferral loss ----------------------------------------------------------


def _qarray(q) -> np.ndarray:
    return np.asarray(q.q if isinstance(q, QVector) else q, dtype=float)


def conditional_deferral(q, s) -> tuple[float, float, float]:
    """(conditional loss, optimal conditional loss, regret) of the deferral loss."""
    q = _qarray(q)
    h = int(np.argmax(np.asarray(s, dtype=float)))
    best = float(q.max())
    return 1.0 - float(q[h]), 1.0 - best, best - float(q[h])


def brute_force_deferral(q, s, costs_given_y, p) -> tuple[float, float]:
    """Conditional deferral loss by direct enumeration of every action.

    ``p`` is p(x, .) and ``costs_given_y[y, j]`` is c_j(x, y). Returns the
    loss of the argmax action of ``s`` and the best loss over all actions.
    """
    p = np.asarray(p, dtype=float)
    n = p.size
    n_e = costs_given_y.shape[1]

    def action_loss(a):
        if a < n:
            return sum(p[y] * (a != y) for y in range(n))
        return sum(p[y] * costs_given_y[y, a - n] for y in range(n))

    losses = [action_loss(a) for a in range(n + n_e)]
    h = int(np.argmax(np.asarray(s, dtype=float)))
    return losses[h], min(losses)


# -- surrogate infima -------------------------------------------------------


def _closed_form_infimum(spec: SurrogateSpec, q: np.ndarray) -> float | None:
    """Infimum of sum_k q_k ell(s, k) over all score vectors, when known."""
    Q = q.sum()
    K = q.size
    fam, v = spec.family, spec.variant
    if fam == "comp_sum" and v == "log":
        pos = q[q > 0]
        return float(-(pos * np.log(pos / Q)).sum())
    if v == "exp" and fam in ("comp_sum", "sum"):
        # both reduce to sum_k q_k / p_k - Q, minimised at p ~ sqrt(q)
        return float(np.sqrt(q).sum() ** 2 - Q)
    if fam == "comp_sum" and v == "mae":
        return float(Q - q.max())
    if fam == "comp_sum" and v == "gce":
        a = spec.alpha
        if a == 1.0:
            return float(Q - q.max())
        top = q.max()
        if top == 0:
            return float(Q / a)
        r = 1.0 / (1.0 - a)
        return float((Q - top * ((q / top) ** r).sum() ** (1.0 - a)) / a)
    if fam == "sum" and v == "rho":
        srt = np.sort(q)[::-1]
        return float((np.arange(K) * srt).sum())
    if fam == "constrained":
        w = Q - q
        if v == "hinge":
            return float(K * w.min())
        if v == "rho":
            return float(w.min())
        if v == "sq":
            return 0.0 if np.any(w <= 0) else float(K * K / (1.0 / w).sum())
        if v == "exp":
            return 0.0 if np.any(w <= 0) else float(K * np.exp(np.log(w).mean()))
    return None


def _starts(K: int, lam: float, zero_sum: bool, settings: MinimizerSettings) -> np.ndarray:
    """One-hot style starts for every label, the origin, then random starts."""
    scale = lam if math.isfinite(lam) else 3.0
    rows = [np.zeros(K)]
    for k in range(K):
        r = np.full(K, -scale)
        r[k] = scale
        rows.append(r)
    rng = np.random.default_rng(settings.seed)
    extra = max(settings.restarts - len(rows), 0)
    if extra:
        rows.extend(rng.normal(scale=min(scale, 3.0), size=(extra, K)))
    out = np.array(rows[: max(settings.restarts, 1)] if settings.restarts < len(rows) else rows)
    if zero_sum:
        out = out - out.mean(axis=1, keepdims=True)
    return out


def _polish(spec, q, x, val, hclass, settings, rng):
    """Restart from random perturbations of the incumbent at shrinking scales.

    Gets projected descent off kinks where the chosen subgradient is not a
    descent direction.
    """
    alpha, rho = spec._params()
    K = q.size
    for scale in (1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001) * 3:
        starts = x[None, :] + rng.normal(scale=scale, size=(5, K))
        v, xn = kernels.minimize_weighted(
            spec.code, alpha, rho, q, starts, hclass.bound, spec.constrained,
            settings.steps, settings.step_size, settings.tol * 1e-3,
        )
        if v < val:
            val, x = v, np.asarray(xn)
    return val, x


_SMOOTH_CONVEX = {("comp_sum", "log"), ("comp_sum", "exp"), ("sum", "sq"), ("sum", "exp"),
                  ("constrained", "sq"), ("constrained", "exp")}


def _sum_sq_newton(q, x):
    """Exact minimiser of the sum-squared-hinge objective on x's active set."""
    K = q.size
    for _ in range(5):
        M = x[:, None] - x[None, :]
        act = (M < 1.0) & ~np.eye(K, dtype=bool)
        # residual r_kj = 1 - s_k + s_j on active pairs, weighted by q_k
        rows, rhs, wts = [], [], []
        for k, j in zip(*np.nonzero(act)):
            r = np.zeros(K)
            r[k], r[j] = -1.0, 1.0
            rows.append(r)
            rhs.append(-1.0)
            wts.append(np.sqrt(q[k]))
        if not rows:
            return x
        A = np.array(rows) * np.array(wts)[:, None]
        b = np.array(rhs) * np.array(wts)
        xn = np.linalg.lstsq(A, b, rcond=None)[0]
        xn -= xn.mean()
        if np.array_equal((xn[:, None] - xn[None, :] < 1.0) & ~np.eye(K, dtype=bool), act):
            return xn
        x = xn
    return x


def numeric_infimum(spec: SurrogateSpec, q, hclass: HypothesisClassSpec = ALL_MEASURABLE,
                    settings: MinimizerSettings = MinimizerSettings()) -> tuple[float, np.ndarray]:
    """Projected gradient descent over the class; returns (value, minimizer).

    Nonsmooth or nonconvex losses get a perturbation polish after the
    multi-start descent.
    """
    q = np.asarray(q, dtype=float)
    starts = _starts(q.size, hclass.bound, spec.constrained, settings)
    alpha, rho = spec._params()
    val, x = kernels.minimize_weighted(
        spec.code, alpha, rho, q, starts, hclass.bound, spec.constrained,
        settings.steps, settings.step_size, settings.tol,
    )
    x = np.asarray(x)
    if spec.code == kernels.SUM_SQ and not math.isfinite(hclass.bound):
        xn = _sum_sq_newton(q, x - x.mean())
        vn = float(weighted_loss_grad(spec, xn, q)[0][0])
        if vn < val:
            val, x = vn, xn
    if (spec.family, spec.variant) not in _SMOOTH_CONVEX:
        val, x = _polish(spec, q, x, val, hclass, settings, np.random.default_rng(settings.seed + 1))
    if not np.isfinite(val):
        raise OptimizationFailure(f"inner minimisation diverged for {spec}", val)
    return float(val), x


def _piecewise_pieces(spec, w, lam):
    """Linear pieces (lo, hi, intercept, slope) of w_j * phi(-s) on [-lam, lam]."""
    if spec.variant == "hinge":
        knots, coef = [-1.0], [(0.0, 0.0), (1.0, 1.0)]
    else:
        r = spec.rho
        knots, coef = [-r, 0.0], [(0.0, 0.0), (1.0, 1.0 / r), (1.0, 0.0)]
    edges = [-lam] + [k for k in knots if -lam < k < lam] + [lam]
    pieces = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        a, b = coef[sum(mid > k for k in knots)]
        pieces.append((lo, hi, a, b))
    return pieces


def _separable_pl_infimum(spec, q, lam):
    """Exact inf of sum_j w_j phi(-s_j) with sum s = 0 and |s_j| <= lam.

    Enumerates one linear piece per coordinate; each choice is a continuous
    knapsack solved greedily (raise the cheapest slopes first).
    """
    import itertools

    w = q.sum() - q
    K = q.size
    if not math.isfinite(lam):
        # optimum of the unbounded problem sits inside this box
        lam = K * max(1.0, spec.rho or 1.0) + 1.0
    pieces = _piecewise_pieces(spec, w, lam)
    best = math.inf
    for combo in itertools.product(range(len(pieces)), repeat=K):
        lo = np.array([pieces[c][0] for c in combo])
        hi = np.array([pieces[c][1] for c in combo])
        a = np.array([pieces[c][2] for c in combo]) * w
        b = np.array([pieces[c][3] for c in combo]) * w
        need = -lo.sum()
        if need < 0 or need > (hi - lo).sum():
            continue
        s = lo.copy()
        for j in np.argsort(b, kind="stable"):
            take = min(hi[j] - lo[j], need)
            s[j] += take
            need -= take
            if need <= 0:
                break
        best = min(best, float((a + b * s).sum()))
    return best


def conditional_infimum(spec: SurrogateSpec, q, hclass: HypothesisClassSpec = ALL_MEASURABLE,
                        settings: MinimizerSettings = MinimizerSettings(),
                        method: str = "auto") -> float:
    """inf over the class of sum_k q_k ell(s, k).

    ``method="auto"`` uses the closed form for all measurable functions when
    one exists and projected gradient descent otherwise.
    """
    q = _qarray(q)
    if np.any(q < -1e-12):
        raise ValueError("q must be nonnegative; rescale costs into [0, 1] first")
    q = np.maximum(q, 0.0)
    if method not in ("auto", "numeric", "closed"):
        raise ValueError(f"unknown method {method!r}")
    if method != "numeric" and hclass.kind == "all_measurable":
        val = _closed_form_infimum(spec, q)
        if val is not None:
            return val
        if method == "closed":
            raise ValueError(f"no closed form for {spec}")
    if (method != "numeric" and spec.constrained and spec.variant in ("hinge", "rho")
            and q.size <= 8):
        return _separable_pl_infimum(spec, q, hclass.bound)
    return numeric_infimum(spec, q, hclass, settings)[0]


def conditional_surrogate(spec: SurrogateSpec, q, s, hclass: HypothesisClassSpec = ALL_MEASURABLE,
                          settings: MinimizerSettings = MinimizerSettings()) -> tuple[float, float, float]:
    """(conditional loss, optimal conditional loss over the class, regret)."""
    q = _qarray(q)
    s = np.asarray(s, dtype=float)
    if not hclass.contains(s):
        raise ValueError(f"score vector leaves the class {hclass}")
    loss = float(weighted_loss_grad(spec, s, q)[0][0])
    opt = conditional_infimum(spec, q, hclass, settings)
    regret = loss - opt
    if regret < -1e-9:
        raise OptimizationFailure(f"loss {loss} below computed infimum {opt}", opt)
    return loss, opt, regret


# -- expected quantities ----------------------------------------------------


@dataclass
class RegretReport:
    per_point: list = field(default_factory=list)
    E_def: float = 0.0
    E_def_star: float = 0.0
    E_L: float = 0.0
    E_L_star: float = 0.0
    deferral_regret: float = 0.0
    surrogate_regret: float = 0.0
    M_Ldef: float = 0.0
    A_Ldef: float = 0.0
    M_L: float = 0.0
    A_L: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def model_scores(model, d: FiniteDistribution) -> np.ndarray:
    """Score matrix for every point of ``d`` from an array, mapping or model."""
    if isinstance(model, np.ndarray):
        return model
    if isinstance(model, dict):
        return np.array([model[pid] for pid in d.ids], dtype=float)
    if hasattr(model, "forward"):
        return model.forward(d.features)
    return np.array([model(x) for x in d.features], dtype=float)


def expected_losses(spec: SurrogateSpec, d: FiniteDistribution, panel: ExpertPanel, model,
                    hclass: HypothesisClassSpec = ALL_MEASURABLE,
                    settings: MinimizerSettings = MinimizerSettings()) -> RegretReport:
    S = model_scores(model, d)
    Qm = q_matrix(d, panel)
    w = d.marginal
    rep = RegretReport()
    def_loss, def_opt = [], []
    sur_loss, sur_opt, sur_all = [], [], []
    for i in range(len(d)):
        dl, do, dr = conditional_deferral(Qm[i], S[i])
        sl, so, sr = conditional_surrogate(spec, Qm[i], S[i], hclass, settings)
        sa = so if hclass.kind == "all_measurable" else conditional_infimum(spec, Qm[i], ALL_MEASURABLE, settings)
        def_loss.append(dl)
        def_opt.append(do)
        sur_loss.append(sl)
        sur_opt.append(so)
        sur_all.append(sa)
        rep.per_point.append(
            dict(id=d.ids[i], deferral_loss=dl, deferral_optimal=do, deferral_regret=dr,
                 surrogate_loss=sl, surrogate_optimal=so, surrogate_regret=sr)
        )
    def_loss, def_opt = np.array(def_loss), np.array(def_opt)
    sur_loss, sur_opt, sur_all = np.array(sur_loss), np.array(sur_opt), np.array(sur_all)
    rep.E_def = float(w @ def_loss)
    rep.E_L = float(w @ sur_loss)
    # pointwise classes: best-in-class risk = expected pointwise infimum
    rep.E_def_star = float(w @ def_opt)
    rep.E_L_star = float(w @ sur_opt)
    rep.deferral_regret = rep.E_def - rep.E_def_star
    rep.surrogate_regret = rep.E_L - rep.E_L_star
    rep.M_Ldef = rep.E_def_star - float(w @ def_opt)
    # every argmax label is reachable, so the pointwise optimum matches H_all
    rep.A_Ldef = rep.E_def_star - float(w @ def_opt)
    rep.M_L = rep.E_L_star - float(w @ sur_opt)
    rep.A_L = rep.E_L_star - float(w @ sur_all)
    return rep


@dataclass
class BoundRecord:
    lhs: float
    rhs: float
    slack: float
    holds: bool
    surrogate_excess: float
    rhs_with_constants: float
    holds_with_constants: bool
    M_L: float
    A_L: float
    M_Ldef: float
    gap_free_form: bool

    def to_dict(self) -> dict:
        return asdict(self)


def verify_bound(spec: SurrogateSpec, d: FiniteDistribution, panel: ExpertPanel, model,
                 hclass: HypothesisClassSpec = ALL_MEASURABLE,
                 settings: MinimizerSettings = MinimizerSettings(),
                 gamma_classes: str = "augmented") -> BoundRecord:
    """Evaluate both sides of the consistency bound for one hypothesis.

    For linear Gamma the bound is checked constant-free (the tighter form);
    ``rhs_with_constants`` always carries the cost-dependent factors.
    """
    if not panel.in_unit_interval():
        raise CostModeError(
            "the bound assumes costs in [0, 1]; call panel.for_bound_verification() "
            f"first (declared upper bounds {panel.upper.tolist()})"
        )
    panel.check_bounds()
    rep = expected_losses(spec, d, panel, model, hclass, settings)
    space = LabelSpace(d.n, panel.n_e)
    gamma = gamma_of(spec, space, gamma_classes)
    lhs = rep.E_def - rep.E_def_star + rep.M_Ldef
    eps = max(rep.E_L - rep.E_L_star + rep.M_L, 0.0)
    lo, hi = float(panel.lower.sum()), float(panel.upper.sum())
    with_consts = (space.n_e + 1 - lo) * gamma(eps / (space.n_e + 1 - hi))
    rhs = gamma.bound(eps, space.n_e, lo, hi)
    return BoundRecord(
        lhs=lhs, rhs=rhs, slack=rhs - lhs, holds=bool(lhs <= rhs + BOUND_TOL),
        surrogate_excess=eps, rhs_with_constants=with_consts,
        holds_with_constants=bool(lhs <= with_consts + BOUND_TOL),
        M_L=rep.M_L, A_L=rep.A_L, M_Ldef=rep.M_Ldef, gap_free_form=bool(abs(rep.M_L) < 1e-12),
    )


# -- binary exponential example ---------------------------------------------


def binary_exp_gap(eta: float, lam: float) -> dict:
    """Approximation error minus minimizability gap for e^{-y h} with |h| <= lam.

    Single-point (deterministic input) version: the infimum over the bounded
    class minus the infimum over all measurable functions.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if not lam > 0:
        raise ValueError("lam must be positive")
    if eta == 1.0:
        h = lam
    elif eta == 0.0:
        h = -lam
    else:
        h = float(np.clip(0.5 * math.log(eta / (1.0 - eta)), -lam, lam))
    inf_bounded = eta * math.exp(-h) + (1.0 - eta) * math.exp(h)
    inf_all = 2.0 * math.sqrt(eta * (1.0 - eta))
    return {"approx_error_minus_gap": inf_bounded - inf_all, "minimizer": h}


def binary_exp_gap_numeric(eta: float, lam: float) -> float:
    """Same quantity from two independent scalar minimisations."""

    def risk(h):
        return eta * math.exp(-h) + (1.0 - eta) * math.exp(h)

    bounded = optimize.minimize_scalar(risk, bounds=(-lam, lam), method="bounded",
                                       options={"xatol": 1e-12})
    vals = [bounded.fun, risk(-lam), risk(lam)]
    free = optimize.minimize_scalar(risk, bounds=(-60.0, 60.0), method="bounded",
                                    options={"xatol": 1e-12})
    return float(min(vals) - min(free.fun, risk(-60.0), risk(60.0)))


# -- learning bound ---------------------------------------------------------


def learning_bound_rhs(gamma, rademacher: float, b_L: float, m: int, delta: float,
                       M_L: float = 0.0, sum_lower: float = 0.0, sum_upper: float = None,
                       n_e: int = 1) -> float:
    """Deferral estimation bound for the empirical surrogate minimiser."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if m < 1:
        raise ValueError("sample size must be positive")
    if sum_upper is None:
        sum_upper = float(n_e)
    inner = 4.0 * rademacher + 2.0 * b_L * math.sqrt(math.log(2.0 / delta) / (2.0 * m)) + M_L
    return gamma.bound(inner, n_e, sum_lower, sum_upper)


def confidence_term(b_L: float, m: int, delta: float) -> float:
    return 2.0 * b_L * math.sqrt(math.log(2.0 / delta) / (2.0 * m))


@dataclass(frozen=True)
class ModelClass:
    """Score models of one architecture with parameter norm at most ``norm_bound``.

    ``fixed`` pins the class to a single model, which makes the Rademacher
    average a mean of random signs.
    """

    architecture: str
    input_dim: int
    output_dim: int
    hidden_dim: int = 64
    norm_bound: float = 10.0
    fixed: object = None

    @classmethod
    def singleton(cls, model) -> "ModelClass":
        return cls(model.architecture, model.input_dim, model.output_dim, model.hidden_dim or 0,
                   model.param_norm(), fixed=model)


@dataclass
class RademacherEstimate:
    estimate: float
    std_error: float
    suprema: list
    stalled: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_rademacher(spec: SurrogateSpec, sample, model_class: ModelClass, trials: int = 5,
                        seed: int = 0, restarts: int = 10, epochs: int = 5,
                        learning_rate: float = 1e-2, start=None) -> RademacherEstimate:
    """Monte-Carlo empirical Rademacher complexity of the surrogate over a model class.

    Each trial draws signs and maximises the sign-weighted mean surrogate by
    projected Adam ascent from several starts (``start``, if given, plus
    random initialisations). Suprema found this way are lower bounds of the
    true ones, so the estimate is too; ``stalled`` is set when no start of
    some trial improved on its initial value.
    """
    from .training import ScoreModel, TrainConfig, train

    if len(sample) == 0:
        raise ValueError("empty sample")
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng([seed, 11])
    n = model_class.output_dim - sample.costs.shape[1]
    W = None
    sups, stalled = [], False
    for t in range(trials):
        sigma = rng.choice([-1.0, 1.0], size=len(sample))
        if model_class.fixed is not None:
            if W is None:
                from .losses import surrogate_weights

                W = surrogate_weights(sample.y, sample.costs, n)
                fixed_L = weighted_loss_grad(spec, model_class.fixed.forward(sample.X), W)[0]
            sups.append(float((sigma * fixed_L).mean()))
            continue
        best, improved = -np.inf, False
        cfg = TrainConfig(spec=spec, epochs=epochs, learning_rate=learning_rate, weight_decay=0.0,
                          seed=int(rng.integers(2**31)), constraint_projection=spec.constrained,
                          max_param_norm=model_class.norm_bound)
        inits = [] if start is None else [start]
        inits += [ScoreModel.init(model_class.architecture, model_class.input_dim,
                                  model_class.output_dim, model_class.hidden_dim,
                                  seed=int(rng.integers(2**31)))
                  for _ in range(max(restarts - len(inits), 0))]
        for init in inits:
            _, curve = train(init, sample, None, cfg, sign=-sigma)
            vals = -curve
            improved |= bool(vals[1:].max(initial=-np.inf) > vals[0])
            best = max(best, float(vals.max()))
        stalled |= not improved
        sups.append(best)
    sups = np.array(sups)
    se = float(sups.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    if stalled:
        warnings.warn("Rademacher ascent made no progress from any start in some trial", RuntimeWarning)
    return RademacherEstimate(float(sups.mean()), se, sups.tolist(), stalled)


# -- random instances for sweeps --------------------------------------------


def random_hypothesis(rng: np.random.Generator, spec: SurrogateSpec, q_rows: np.ndarray,
                      hclass: HypothesisClassSpec = ALL_MEASURABLE) -> np.ndarray:
    """Random score matrix: pure noise or a perturbed near-optimal score."""
    m, K = q_rows.shape
    mode = rng.integers(3)
    if mode == 0:
        S = rng.normal(scale=rng.choice([0.1, 1.0, 3.0]), size=(m, K))
    elif mode == 1:
        qb = np.maximum(q_rows, 1e-6)
        S = np.log(qb / qb.sum(axis=1, keepdims=True)) + rng.normal(scale=0.05, size=(m, K))
    else:
        # near-uniform scores: small regrets with frequent wrong argmaxes
        S = rng.normal(scale=1e-3, size=(m, K))
    if spec.constrained:
        S = S - S.mean(axis=1, keepdims=True)
    if hclass.kind == "bounded_scores":
        if spec.constrained:
            S = np.array([kernels.project(r, hclass.bound, True) for r in S])
        else:
            S = np.clip(S, -hclass.bound, hclass.bound)
    return S


def random_instance(seed: int, max_n: int = 3, max_n_e: int = 2, max_points: int = 5):
    """Seeded (distribution, panel) pair with costs rescaled into [0, 1]."""
    from .core import MISCLASSIFICATION, MISCLASSIFICATION_PLUS_BASE, random_distribution

    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_n + 1))
    n_e = int(rng.integers(1, max_n_e + 1))
    m = int(rng.integers(1, max_points + 1))
    kinds = [str(rng.choice([MISCLASSIFICATION, MISCLASSIFICATION_PLUS_BASE])) for _ in range(n_e)]
    betas = [0.0 if k == MISCLASSIFICATION else float(rng.uniform(0.0, 0.5)) for k in kinds]
    d, panel = random_distribution(rng, n, n_e, m, kinds=kinds, betas=betas,
                                   latent_experts=bool(rng.integers(2)))
    return d, panel.for_bound_verification(), rng


def sweep_rows(seed: int, specs, hclass: HypothesisClassSpec = ALL_MEASURABLE,
               settings: MinimizerSettings = MinimizerSettings()) -> list[dict]:
    """One bound check per spec on the instance drawn from ``seed``."""
    d, panel, rng = random_instance(seed)
    Qm = q_matrix(d, panel)
    rows = []
    for spec in specs:
        S = random_hypothesis(rng, spec, Qm, hclass)
        rec = verify_bound(spec, d, panel, S, hclass, settings)
        rows.append(dict(seed=seed, spec=spec.token, hclass=hclass, record=rec))
    return rows
