"""Command-line harness: training runs, bound sweeps, gap tables, learning-bound
checks and the oracle-equivalence suite.

Exit codes: 0 success, 1 configuration error, 2 a checked inequality failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import kernels
from .analysis import (
    HypothesisClassSpec, ModelClass, binary_exp_gap,
    binary_exp_gap_numeric, brute_force_deferral, conditional_deferral, estimate_rademacher,
    learning_bound_rhs, random_instance, sweep_rows,
)
from .core import LabelSpace, q_matrix
from .losses import (
    ALL_SPECS, SpecParseError, SurrogateSpec, gamma_of, parse_spec, surrogate_loss, surrogate_weights,
    weighted_loss_grad,
)
from .training import (
    ScoreModel, SyntheticTaskSpec, TaskConfigError, TrainConfig, deferral_regret, evaluate_system,
    generate_task, train,
)

log = logging.getLogger("mxdefer")

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2
ORACLE_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


def kv(level: int, **items):
    log.log(level, " ".join(f"{k}={v}" for k, v in items.items()))


# -- configuration ------------------------------------------------------------


@dataclass
class TrainSection:
    spec: str = "log"
    architecture: str = "mlp2"
    hidden_dim: int = 64
    m: int = 1000
    epochs: int = 50
    step_budget: int | None = None
    batch_size: int = 32
    learning_rate: float = 3e-3
    optimizer: str = "adam"
    adam_betas: list = field(default_factory=lambda: [0.9, 0.999])
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    lr_schedule: str = "cosine"

    def epochs_for(self, m: int) -> int:
        if self.step_budget is None:
            return self.epochs
        return max(1, round(self.step_budget * self.batch_size / m))

    def train_config(self, m: int, seed: int) -> TrainConfig:
        spec = parse_spec(self.spec)
        return TrainConfig(
            spec=spec, epochs=self.epochs_for(m), batch_size=self.batch_size,
            learning_rate=self.learning_rate, optimizer=self.optimizer,
            adam_betas=tuple(self.adam_betas), adam_eps=self.adam_eps,
            weight_decay=self.weight_decay, seed=seed, constraint_projection=spec.constrained,
            lr_schedule=self.lr_schedule,
        )


@dataclass
class LearningBoundSection:
    m_grid: list = field(default_factory=lambda: [250, 1000, 4000])
    delta: float = 0.05
    trials: int = 3
    restarts: int = 4
    ascent_epochs: int = 5
    ascent_learning_rate: float = 1e-2
    b_L: float | None = None


@dataclass
class AnalysisSection:
    hclass: dict = field(default_factory=lambda: {"kind": "all_measurable"})
    verify_specs: list = field(default_factory=lambda: [s.token for s in ALL_SPECS])
    sweep_seeds: int = 100
    regret_check_instances: int = 500
    learning_bound: LearningBoundSection = field(default_factory=LearningBoundSection)


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "out"
    task: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)
    train: TrainSection = field(default_factory=TrainSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def hypothesis_class(self) -> HypothesisClassSpec:
        return HypothesisClassSpec(**self.analysis.hclass)

    def specs(self) -> list[SurrogateSpec]:
        return [parse_spec(t) for t in self.analysis.verify_specs]


def _fill(cls, doc, where):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(doc) - set(names))
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}: unknown field (valid: {', '.join(names)})")
    kw = {}
    for k, v in doc.items():
        if k == "learning_bound":
            v = _fill(LearningBoundSection, v, f"{where}.{k}")
        kw[k] = v
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def validate_config(cfg: ExperimentConfig):
    """Raise ConfigError naming the first offending field."""
    try:
        cfg.task.validate()
    except TaskConfigError as exc:
        raise ConfigError(f"task: {exc}") from exc
    t = cfg.train
    try:
        parse_spec(t.spec)
    except SpecParseError as exc:
        raise ConfigError(f"train.spec: {exc}") from exc
    if t.architecture not in ("linear", "mlp2"):
        raise ConfigError("train.architecture: must be 'linear' or 'mlp2'")
    checks = [
        ("train.m", t.m >= 1), ("train.hidden_dim", t.hidden_dim >= 1),
        ("train.epochs", t.epochs >= 0), ("train.batch_size", t.batch_size >= 1),
        ("train.learning_rate", t.learning_rate >= 0), ("train.weight_decay", t.weight_decay >= 0),
        ("train.step_budget", t.step_budget is None or t.step_budget >= 1),
        ("train.optimizer", t.optimizer in ("sgd", "adam")),
        ("train.lr_schedule", t.lr_schedule in ("constant", "cosine")),
        ("analysis.sweep_seeds", cfg.analysis.sweep_seeds >= 0),
        ("analysis.regret_check_instances", cfg.analysis.regret_check_instances >= 0),
    ]
    for name, ok in checks:
        if not ok:
            raise ConfigError(f"{name}: invalid value")
    for i, tok in enumerate(cfg.analysis.verify_specs):
        try:
            parse_spec(tok)
        except SpecParseError as exc:
            raise ConfigError(f"analysis.verify_specs[{i}]: {exc}") from exc
    try:
        cfg.hypothesis_class()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"analysis.hclass: {exc}") from exc
    lb = cfg.analysis.learning_bound
    if not 0 < lb.delta < 1:
        raise ConfigError("analysis.learning_bound.delta: must lie in (0, 1)")
    if not lb.m_grid or any(int(m) < 1 for m in lb.m_grid):
        raise ConfigError("analysis.learning_bound.m_grid: sample sizes must be positive")
    if lb.trials < 1 or lb.restarts < 1:
        raise ConfigError("analysis.learning_bound: trials and restarts must be positive")


def load_config(path=None, seed=None, out=None) -> ExperimentConfig:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be an object")
    unknown = sorted(set(doc) - {"seed", "output_dir", "task", "train", "analysis"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown top-level field")
    cfg = ExperimentConfig(
        seed=int(doc.get("seed", 0)),
        output_dir=str(doc.get("output_dir", "out")),
        task=_fill(SyntheticTaskSpec, doc.get("task"), "task"),
        train=_fill(TrainSection, doc.get("train"), "train"),
        analysis=_fill(AnalysisSection, doc.get("analysis"), "analysis"),
    )
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.output_dir = str(out)
    validate_config(cfg)
    return cfg


# -- output helpers -------------------------------------------------------------


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def prepare_output(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    if not out.exists():
        out.mkdir(parents=True)
        kv(logging.INFO, event="created_output_dir", path=out)
    (out / "effective_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


# -- pipelines (also used by the test suite) --------------------------------------


def fit(task: SyntheticTaskSpec, section: TrainSection, m: int, seed: int):
    """Generate the task at sample size m and train one model on it."""
    tr, te, d, panel = generate_task(task, m, seed)
    tcfg = section.train_config(m, seed)
    model = ScoreModel.init(section.architecture, task.input_dim, task.n + task.n_e,
                            section.hidden_dim, seed=seed)
    model, curve = train(model, tr, panel, tcfg)
    return model, curve, (tr, te, d, panel)


def learning_bound_row(cfg: ExperimentConfig, m: int) -> dict:
    """Train at sample size m and compare the observed excess deferral loss
    with the estimation bound."""
    lb = cfg.analysis.learning_bound
    model, _, (tr, _, d, panel) = fit(cfg.task, cfg.train, m, cfg.seed)
    if not panel.in_unit_interval():
        raise ConfigError("task: the learning bound needs expert costs in [0, 1] (cost_kind 1 or zero betas)")
    spec = parse_spec(cfg.train.spec)
    E, E_star = deferral_regret(model, d, panel)
    W = surrogate_weights(tr.y, tr.costs, cfg.task.n)
    losses = weighted_loss_grad(spec, model.forward(tr.X), W)[0]
    b_L = lb.b_L if lb.b_L is not None else 1.1 * float(losses.max())
    mclass = ModelClass(model.architecture, model.input_dim, model.output_dim,
                        model.hidden_dim or 0, model.param_norm())
    rad = estimate_rademacher(spec, tr, mclass, trials=lb.trials, seed=cfg.seed, restarts=lb.restarts,
                              epochs=lb.ascent_epochs, learning_rate=lb.ascent_learning_rate, start=model)
    gamma = gamma_of(spec, LabelSpace(cfg.task.n, cfg.task.n_e))
    # the true complexity is nonnegative; a negative Monte-Carlo value is noise
    rhs = learning_bound_rhs(gamma, max(rad.estimate, 0.0), b_L, m, lb.delta, M_L=0.0,
                             sum_lower=float(panel.lower.sum()), sum_upper=float(panel.upper.sum()),
                             n_e=cfg.task.n_e)
    lhs = E - E_star
    return dict(m=m, observed_lhs=lhs, bound_rhs=rhs, holds=bool(lhs <= rhs), spec=spec.token,
                seed=cfg.seed, rademacher=rad.estimate, rademacher_se=rad.std_error, b_L=b_L)


def regret_check_instance(seed: int) -> tuple[float, float]:
    """Largest (deferral, surrogate) discrepancy between the closed forms and
    direct evaluation on one random instance."""
    d, panel, rng = random_instance(seed)
    Qm = q_matrix(d, panel)
    K = d.n + panel.n_e
    worst_def = worst_sur = 0.0
    for i in range(len(d)):
        s = rng.normal(size=K)
        p = d.conditional[i]
        closed, closed_best, _ = conditional_deferral(Qm[i], s)
        brute, brute_best = brute_force_deferral(Qm[i], s, panel.costs[i], p)
        worst_def = max(worst_def, abs(closed - brute), abs(closed_best - brute_best))
        for spec in ALL_SPECS:
            ss = s - s.mean() if spec.constrained else s
            closed_s = float(weighted_loss_grad(spec, ss, Qm[i])[0][0])
            direct = sum(p[y] * surrogate_loss(spec, ss, y, panel, x=i) for y in range(d.n))
            worst_sur = max(worst_sur, abs(closed_s - direct) / max(1.0, abs(direct)))
    return worst_def, worst_sur


# -- commands -------------------------------------------------------------------


def cmd_train(cfg: ExperimentConfig, jobs: int = 1) -> int:
    out = prepare_output(cfg)
    m = cfg.train.m
    model, curve, (_, te, d, panel) = fit(cfg.task, cfg.train, m, cfg.seed)
    model.save(out / "model.json")
    write_csv(out / "loss_curve.csv", ["epoch", "surrogate_loss"], enumerate(curve.tolist()))
    ev = evaluate_system(model, te, panel)
    E, E_star = deferral_regret(model, d, panel)
    options = ["predictor"] + [f"expert_{j + 1}" for j in range(cfg.task.n_e)]
    rows = [("system_accuracy", "", "", ev.system_accuracy),
            ("classifier_accuracy", "", "", ev.classifier_accuracy),
            ("deferral_loss", "", "", E), ("bayes_deferral_loss", "", "", E_star),
            ("deferral_regret", "", "", E - E_star)]
    rows += [("deferral_ratio", "", o, r) for o, r in zip(options, ev.deferral_ratios)]
    rows += [("routing", c, o, r) for c in range(cfg.task.n)
             for o, r in zip(options, ev.per_class_routing[c])]
    write_csv(out / "evaluation.csv", ["quantity", "class", "option", "value"], rows)
    print(f"seed={cfg.seed} spec={cfg.train.spec} m={m} n_e={cfg.task.n_e} "
          f"system_accuracy={ev.system_accuracy:.4f} deferral_regret={E - E_star:.4f} "
          f"final_loss={curve[-1]:.4f}")
    return EXIT_OK


def _sweep_job(args):
    seed, tokens, hclass = args
    specs = [parse_spec(t) for t in tokens]
    return [(r["seed"], r["spec"], r["record"]) for r in sweep_rows(seed, specs, hclass)]


def cmd_verify(cfg: ExperimentConfig, jobs: int = 1) -> int:
    out = prepare_output(cfg)
    hclass = cfg.hypothesis_class()
    tokens = [s.token for s in cfg.specs()]
    seeds = [cfg.seed * 1_000_003 + i for i in range(cfg.analysis.sweep_seeds)]
    work = [(s, tokens, hclass) for s in seeds]
    if jobs > 1 and work:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_job, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        results = [_sweep_job(w) for w in work]
    cls = hclass.kind if hclass.lam is None else f"{hclass.kind}:{hclass.lam!r}"
    rows, failures = [], 0
    for chunk in results:
        for seed, tok, rec in chunk:
            rows.append((seed, tok, cls, rec.lhs, rec.rhs, rec.slack, rec.holds, rec.M_L, rec.A_L, rec.M_Ldef))
            failures += not rec.holds
    write_csv(out / "verify.csv",
              ["seed", "spec", "class", "lhs", "rhs", "slack", "holds", "M_L", "A_L", "M_Ldef"], rows)
    kv(logging.INFO, event="verify_done", rows=len(rows), failures=failures)
    print(f"rows={len(rows)} failures={failures}")
    return EXIT_FAILED if failures else EXIT_OK


def cmd_gaps(out_dir: Path, lambdas, etas) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, bad = [], 0
    for eta in etas:
        for lam in lambdas:
            closed = binary_exp_gap(eta, lam)["approx_error_minus_gap"]
            num = binary_exp_gap_numeric(eta, lam)
            diff = abs(closed - num)
            bad += diff > 1e-6
            rows.append((eta, lam, closed, num, diff))
    write_csv(out_dir / "gaps.csv", ["eta", "lambda", "closed_form", "numeric", "abs_diff"], rows)
    for r in rows:
        print(" ".join(f"{k}={fmt(v)}" for k, v in zip(["eta", "lambda", "closed_form", "numeric", "abs_diff"], r)))
    return EXIT_FAILED if bad else EXIT_OK


def cmd_learning_bound(cfg: ExperimentConfig, jobs: int = 1) -> int:
    out = prepare_output(cfg)
    rows = [learning_bound_row(cfg, int(m)) for m in cfg.analysis.learning_bound.m_grid]
    cols = ["m", "observed_lhs", "bound_rhs", "holds", "spec", "seed", "rademacher", "rademacher_se", "b_L"]
    write_csv(out / "learning_bound.csv", cols, [[r[c] for c in cols] for r in rows])
    for r in rows:
        kv(logging.INFO, event="learning_bound", m=r["m"], lhs=fmt(r["observed_lhs"]),
           rhs=fmt(r["bound_rhs"]), holds=fmt(r["holds"]))
    failures = sum(not r["holds"] for r in rows)
    print(f"rows={len(rows)} failures={failures}")
    return EXIT_FAILED if failures else EXIT_OK


def cmd_regret_check(cfg: ExperimentConfig, jobs: int = 1) -> int:
    out = prepare_output(cfg)
    seeds = [cfg.seed * 1_000_003 + i for i in range(cfg.analysis.regret_check_instances)]
    if jobs > 1 and seeds:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            res = list(pool.map(regret_check_instance, seeds))
    else:
        res = [regret_check_instance(s) for s in seeds]
    rows = [(s, a, b, a <= ORACLE_TOL and b <= ORACLE_TOL) for s, (a, b) in zip(seeds, res)]
    write_csv(out / "regret_check.csv", ["seed", "deferral_abs_diff", "surrogate_rel_diff", "holds"], rows)
    failures = sum(not r[3] for r in rows)
    print(f"instances={len(rows)} failures={failures}")
    return EXIT_FAILED if failures else EXIT_OK


# -- entry point ------------------------------------------------------------------


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}") from exc


def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, suppress):
        d = argparse.SUPPRESS if suppress else None
        parser.add_argument("--config", default=d, help="experiment JSON (defaults are used when omitted)")
        parser.add_argument("--seed", type=int, default=d, help="root seed, overrides the config")
        parser.add_argument("--out", default=d, help="output directory, overrides the config")
        parser.add_argument("--jobs", type=int, default=d if suppress else 1,
                            help="worker processes for sweeps")

    # flags are accepted before or after the subcommand; the suppressed
    # defaults keep the subcommand parser from clobbering earlier values
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, suppress=True)
    p = argparse.ArgumentParser(prog="mxdefer", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train one model and evaluate the system")
    sub.add_parser("verify", parents=[common], help="bound sweep over random instances")
    g = sub.add_parser("gaps", parents=[common], help="bounded-class exponential gap table")
    g.add_argument("--lambdas", type=_float_list, default=[0.5, 1.0, 2.0, 4.0])
    g.add_argument("--etas", type=_float_list, default=[1.0])
    sub.add_parser("learning-bound", parents=[common], help="estimation bound over a sample-size grid")
    sub.add_parser("regret-check", parents=[common], help="closed forms against direct evaluation")
    return p


def main(argv=None) -> int:
    for h in list(log.handlers):
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    log.propagate = False
    args = build_parser().parse_args(argv)
    kv(logging.INFO, event="start", command=args.command, backend=kernels.BACKEND)
    try:
        if args.command == "gaps":
            if any(not lam > 0 for lam in args.lambdas):
                raise ConfigError("--lambdas: values must be positive")
            if any(not 0 <= e <= 1 for e in args.etas):
                raise ConfigError("--etas: values must lie in [0, 1]")
            out = args.out or (load_config(args.config).output_dir if args.config else "out")
            return cmd_gaps(Path(out), args.lambdas, args.etas)
        cfg = load_config(args.config, args.seed, args.out)
        if args.jobs < 1:
            raise ConfigError("--jobs: must be at least 1")
        cmd = {"train": cmd_train, "verify": cmd_verify, "learning-bound": cmd_learning_bound,
               "regret-check": cmd_regret_check}[args.command]
        return cmd(cfg, jobs=args.jobs)
    except ConfigError as exc:
        kv(logging.ERROR, event="config_error", message=json.dumps(str(exc)))
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
