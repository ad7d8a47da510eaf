import numpy as np
import pytest

from mxdefer.analysis import conditional_deferral
from mxdefer.core import q_matrix
from mxdefer.losses import parse_spec, surrogate_weights, weighted_loss_grad
from mxdefer.training import (
    Dataset, ScoreModel, SyntheticTaskSpec, TaskConfigError, TrainConfig, TrainingDivergence,
    deferral_regret, evaluate_system, generate_task, train,
)

from reference import numeric_grad

LOG = parse_spec("log")


# -- models ------------------------------------------------------------------------


@pytest.mark.parametrize("arch", ["linear", "mlp2"])
def test_forward_shapes_and_init_range(arch):
    m = ScoreModel.init(arch, 3, 5, hidden_dim=7, seed=0)
    assert m.forward(np.zeros(3)).shape == (1, 5)
    assert m.forward(np.zeros((4, 3))).shape == (4, 5)
    first = m.params["W"] if arch == "linear" else m.params["W1"]
    assert np.all(np.abs(first) <= 1 / np.sqrt(3))
    if arch == "mlp2":
        assert np.all(np.abs(m.params["W2"]) <= 1 / np.sqrt(7))


@pytest.mark.parametrize("arch", ["linear", "mlp2"])
def test_backprop_matches_finite_differences(arch, rng):
    model = ScoreModel.init(arch, 2, 4, hidden_dim=6, seed=3)
    X = rng.normal(size=(9, 2))
    W = surrogate_weights(rng.integers(0, 3, 9), rng.random((9, 1)), 3)

    def fn(S):
        L, G = weighted_loss_grad(LOG, S, W)
        return L.mean(), G / len(S)

    _, grads = model.forward_backward(X, fn)
    for k, v in model.params.items():
        assert grads[k].shape == v.shape

        def f(flat, k=k):
            m2 = model.copy()
            m2.params[k] = flat.reshape(v.shape)
            return fn(m2.forward(X))[0]

        np.testing.assert_allclose(grads[k].ravel(), numeric_grad(f, v.ravel(), 1e-6), rtol=1e-5, atol=1e-8)


def test_model_json_round_trip(tmp_path):
    m = ScoreModel.init("mlp2", 2, 5, hidden_dim=4, seed=9)
    m.save(tmp_path / "m.json")
    m2 = ScoreModel.load(tmp_path / "m.json")
    X = np.random.default_rng(0).normal(size=(10, 2))
    assert np.array_equal(m.forward(X), m2.forward(X))
    assert m2.to_dict()["dims"] == {"input": 2, "hidden": 4, "output": 5}


def test_unknown_architecture():
    with pytest.raises(ValueError):
        ScoreModel.init("resnet", 2, 3)


# -- training -----------------------------------------------------------------------


def separable_data(rng, m=200):
    X = rng.normal(size=(m, 2))
    y = (X[:, 0] > 0).astype(int)
    X[:, 0] += np.where(y == 1, 1.0, -1.0)
    return Dataset(X, y, np.ones((m, 1)), np.zeros((m, 1), int))


def test_separable_task_halves_the_loss(rng):
    data = separable_data(rng)
    model = ScoreModel.init("linear", 2, 3, seed=0)
    cfg = TrainConfig(spec=LOG, epochs=50, learning_rate=1e-2)
    _, curve = train(model, data, None, cfg)
    assert len(curve) == 51
    assert curve[-1] <= 0.5 * curve[0]


def test_zero_learning_rate_changes_nothing(rng):
    data = separable_data(rng)
    model = ScoreModel.init("mlp2", 2, 3, seed=0)
    cfg = TrainConfig(spec=LOG, epochs=3, learning_rate=0.0, weight_decay=0.0)
    trained, curve = train(model, data, None, cfg)
    for k in model.params:
        assert np.array_equal(trained.params[k], model.params[k])
    assert np.all(curve == curve[0])


def test_training_is_deterministic(rng):
    data = separable_data(rng)
    model = ScoreModel.init("mlp2", 2, 3, seed=0)
    cfg = TrainConfig(spec=LOG, epochs=3, seed=11)
    a, _ = train(model, data, None, cfg)
    b, _ = train(model, data, None, cfg)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


def test_input_model_is_not_modified(rng):
    data = separable_data(rng)
    model = ScoreModel.init("linear", 2, 3, seed=0)
    before = {k: v.copy() for k, v in model.params.items()}
    train(model, data, None, TrainConfig(spec=LOG, epochs=1))
    assert all(np.array_equal(before[k], model.params[k]) for k in before)


@pytest.mark.parametrize("tok", ["cstnd_hinge", "cstnd_exp"])
def test_constraint_is_preserved(tok, rng):
    # every batch evaluation checks the zero-sum constraint, so finishing is the test
    data = separable_data(rng)
    cfg = TrainConfig(spec=parse_spec(tok), epochs=5, constraint_projection=True)
    trained, _ = train(ScoreModel.init("mlp2", 2, 3, seed=1), data, None, cfg)
    S = trained.forward(rng.normal(scale=3, size=(500, 2)))
    assert np.abs(S.sum(axis=1)).max() < 1e-6


def test_constraint_flag_must_match_family():
    with pytest.raises(ValueError):
        TrainConfig(spec=parse_spec("cstnd_sq")).validate()
    with pytest.raises(ValueError):
        TrainConfig(spec=LOG, constraint_projection=True).validate()


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_nan_loss_aborts_with_diagnostics(rng):
    data = separable_data(rng, 64)
    data.X[5, 0] = np.inf
    with pytest.raises(TrainingDivergence, match=r"batch 0 .*parameter norm"):
        train(ScoreModel.init("linear", 2, 3), data, None, TrainConfig(spec=LOG, epochs=1))


def test_empty_data_rejected():
    empty = Dataset(np.zeros((0, 2)), np.zeros(0, int), np.zeros((0, 1)), np.zeros((0, 1), int))
    with pytest.raises(ValueError):
        train(ScoreModel.init("linear", 2, 3), empty, None, TrainConfig(spec=LOG))


def test_norm_bound_is_enforced(rng):
    data = separable_data(rng)
    cfg = TrainConfig(spec=LOG, epochs=5, learning_rate=0.1, max_param_norm=0.5)
    trained, _ = train(ScoreModel.init("linear", 2, 3), data, None, cfg)
    assert trained.param_norm() <= 0.5 + 1e-12


# -- synthetic tasks ------------------------------------------------------------------


def test_perfect_expert_costs_nothing():
    spec = SyntheticTaskSpec(n=3, expert_profiles=[{"accuracy": 1.0}], support_size=300, test_size=100)
    tr, te, d, panel = generate_task(spec, 500, seed=0)
    assert np.all(tr.costs == 0) and np.all(panel.costs == 0)


def test_domain_oracle_is_right_in_domain():
    spec = SyntheticTaskSpec(n=6, expert_profiles=[{"domain": [0, 1, 2], "in_domain_accuracy": 1.0}],
                             support_size=400, test_size=2000)
    tr, te, _, _ = generate_task(spec, 2000, seed=1)
    inside = te.y < 3
    assert np.all(te.expert_predictions[inside, 0] == te.y[inside])
    # uniformly random elsewhere: right about one time in six
    assert 0.08 < np.mean(te.expert_predictions[~inside, 0] == te.y[~inside]) < 0.28


def test_accuracy_profile_matches_mass():
    spec = SyntheticTaskSpec(n=3, expert_profiles=[{"accuracy": 0.7}], support_size=1000)
    _, _, d, panel = generate_task(spec, 10, seed=2)
    correct = (panel.costs[:, :, 0] == 0)
    assert np.all(correct.all(axis=1) | (~correct).all(axis=1))
    assert d.marginal @ correct[:, 0] == pytest.approx(0.7, abs=1e-3)


def test_separated_clusters_with_free_perfect_expert_have_zero_bayes_loss():
    spec = SyntheticTaskSpec(n=3, radius=10.0, scale=0.5, expert_profiles=[{"accuracy": 1.0}],
                             support_size=300)
    _, _, d, panel = generate_task(spec, 10, seed=0)
    Qm = q_matrix(d, panel)
    bayes = sum(w * conditional_deferral(q, q)[1] for w, q in zip(d.marginal, Qm))
    assert bayes == pytest.approx(0.0, abs=1e-12)


def test_task_reproducible_from_seed():
    spec = SyntheticTaskSpec(expert_profiles=[{"accuracy": 0.8}, {"domain": [1]}], support_size=200)
    a = generate_task(spec, 50, seed=4)
    b = generate_task(spec, 50, seed=4)
    assert np.array_equal(a[0].X, b[0].X) and np.array_equal(a[0].y, b[0].y)
    assert np.array_equal(a[3].costs, b[3].costs)


@pytest.mark.parametrize("kw", [dict(scale=0.0), dict(label_noise=0.5), dict(cost_kind=3),
                                dict(expert_profiles=[{"accuracy": 1.5}]), dict(expert_profiles=[{}]),
                                dict(expert_profiles=[{"domain": [7]}]), dict(betas=[0.1, 0.2])])
def test_bad_task_configs(kw):
    with pytest.raises(TaskConfigError):
        generate_task(SyntheticTaskSpec(**kw), 10, seed=0)
    with pytest.raises(TaskConfigError):
        generate_task(SyntheticTaskSpec(), 0, seed=0)


# -- evaluation ------------------------------------------------------------------------


def fixed_model(bias):
    m = ScoreModel.init("linear", 2, len(bias))
    m.params["W"][:] = 0.0
    m.params["b"][:] = bias
    return m


def test_never_deferring_router():
    spec = SyntheticTaskSpec(n=3, expert_profiles=[{"accuracy": 1.0}], support_size=200, test_size=500)
    _, te, _, panel = generate_task(spec, 10, seed=0)
    ev = evaluate_system(fixed_model([0.0, 1.0, 0.0, -5.0]), te, panel)
    assert ev.system_accuracy == ev.classifier_accuracy == np.mean(te.y == 1)
    np.testing.assert_array_equal(ev.deferral_ratios, [1.0, 0.0])


def test_always_deferring_to_perfect_expert():
    spec = SyntheticTaskSpec(n=3, expert_profiles=[{"accuracy": 0.2}, {"accuracy": 1.0}],
                             support_size=200, test_size=500)
    _, te, d, panel = generate_task(spec, 10, seed=0)
    model = fixed_model([0, 0, 0, 0, 5.0])
    ev = evaluate_system(model, te, panel)
    assert ev.system_accuracy == 1.0
    np.testing.assert_array_equal(ev.deferral_ratios, [0, 0, 1])
    np.testing.assert_array_equal(ev.per_class_routing[:, 2], 1.0)
    assert deferral_regret(model, d, panel) == (0.0, 0.0)


def test_raising_base_cost_does_not_increase_deferral():
    ratios = {}
    for beta in (0.0, 0.4):
        spec = SyntheticTaskSpec(n=3, label_noise=0.1, expert_profiles=[{"accuracy": 0.8}],
                                 cost_kind=2, betas=[beta], support_size=500, test_size=1000)
        vals = []
        for seed in range(5):
            tr, te, _, panel = generate_task(spec, 600, seed)
            cfg = TrainConfig(spec=LOG, epochs=15, learning_rate=3e-3, seed=seed, lr_schedule="cosine")
            model, _ = train(ScoreModel.init("mlp2", 2, 4, hidden_dim=32, seed=seed), tr, panel, cfg)
            vals.append(evaluate_system(model, te, panel).deferral_ratios[1])
        ratios[beta] = np.mean(vals)
    assert ratios[0.4] <= ratios[0.0]
