import math
import warnings

import numpy as np
import pytest

from mxdefer.core import ExpertPanel, InvalidScoreError, LabelSpace
from mxdefer.losses import (
    ALL_SPECS, VALID_TOKENS, ConstraintError, InvalidLabelError, SpecParseError, SurrogateSpec,
    base_loss, deferral_loss, deferral_losses, gamma_of, parse_spec, project_constraint,
    surrogate_gradient, surrogate_loss, surrogate_weights, weighted_loss_grad,
)

from reference import near_kink, numeric_grad, surrogate

LOG = parse_spec("log")


# -- deferral loss ----------------------------------------------------------


def test_deferral_loss_cases():
    c = np.array([0.25, 0.6])
    assert deferral_loss([0, 0, 3, 0, 0], 2, c) == 0.0
    assert deferral_loss([0, 0, 0, 3, 0], 1, c) == 0.25
    assert deferral_loss([3, 0, 0, 0, 0], 2, c) == 1.0


def test_deferral_loss_with_panel(one_point):
    _, panel = one_point
    assert deferral_loss([0, 0, 1], 0, panel, x=0) == 0.0
    assert deferral_loss([0, 0, 1], 1, panel, x=0) == 1.0
    with pytest.raises(InvalidLabelError):
        deferral_loss([0, 0, 1], 2, panel, x=0)


def test_deferral_loss_errors():
    with pytest.raises(InvalidLabelError):
        deferral_loss([0, 1, 0], 5, [0.3])
    with pytest.raises(InvalidScoreError):
        deferral_loss([0, np.nan, 0], 0, [0.3])


def test_vectorised_deferral_losses():
    S = np.array([[0, 0, 3, 0, 0], [0, 0, 0, 3, 0], [3, 0, 0, 0, 0]], float)
    out = deferral_losses(S, [2, 1, 2], np.array([[0.25, 0.6]] * 3))
    np.testing.assert_array_equal(out, [0.0, 0.25, 1.0])


# -- base and surrogate losses -------------------------------------------------


def test_log_uniform_scores():
    for y in range(5):
        assert base_loss(LOG, np.zeros(5), y) == pytest.approx(math.log(5), abs=1e-12)


def test_mae_uniform_scores():
    assert base_loss(parse_spec("mae"), np.zeros(5), 1) == pytest.approx(0.8, abs=1e-12)


def test_sum_rho_vanishes_beyond_margin():
    assert base_loss(parse_spec("sum_rho"), [2.0, 0, 0, 0, 0], 0) == 0.0


def test_surrogate_useless_expert_reduces_to_base(rng):
    for spec in ALL_SPECS:
        s = rng.normal(size=4)
        if spec.constrained:
            s = project_constraint(s)
        assert surrogate_loss(spec, s, 1, [1.0]) == pytest.approx(base_loss(spec, s, 1), abs=1e-12)


def test_surrogate_log_uniform_hand_values():
    assert surrogate_loss(LOG, np.zeros(5), 0, [0.4, 0.9]) == pytest.approx(1.7 * math.log(5), abs=1e-12)
    assert surrogate_loss(LOG, np.zeros(5), 2, [0.0, 0.0]) == pytest.approx(3 * math.log(5), abs=1e-12)
    assert 1.7 * math.log(5) == pytest.approx(2.73605, abs=1e-5)


def test_surrogate_with_panel(one_point):
    _, panel = one_point
    s = np.array([0.3, -0.2, 0.5])
    assert surrogate_loss(LOG, s, 1, panel, x=0) == pytest.approx(surrogate(LOG, s, 1, [1.0]))


@pytest.mark.parametrize("spec", ALL_SPECS, ids=str)
def test_surrogate_matches_reference(spec, rng):
    for _ in range(20):
        K = int(rng.integers(3, 8))
        n_e = int(rng.integers(1, K - 1))
        s = rng.normal(scale=2.0, size=K)
        if spec.constrained:
            s = project_constraint(s)
        c = rng.random(n_e)
        y = int(rng.integers(K - n_e))
        assert surrogate_loss(spec, s, y, c) == pytest.approx(surrogate(spec, s, y, c), rel=1e-12, abs=1e-12)


def test_log_gradient_closed_form():
    g = surrogate_gradient(LOG, np.zeros(5), 0, [1.0, 1.0])
    np.testing.assert_allclose(g, [0.2 - 1, 0.2, 0.2, 0.2, 0.2], atol=1e-15)


def test_sum_rho_flat_region_gradient():
    g = surrogate_gradient(parse_spec("sum_rho"), [5.0, 0, 0, 0], 0, [1.0])
    np.testing.assert_array_equal(g, np.zeros(4))


@pytest.mark.parametrize("spec", ALL_SPECS, ids=str)
def test_gradient_matches_finite_differences(spec, rng):
    checked = 0
    while checked < 15:
        K = int(rng.integers(3, 9))
        n_e = int(rng.integers(1, K - 1))
        s = rng.normal(scale=1.5, size=K)
        if spec.constrained:
            s = project_constraint(s)
        if near_kink(spec, s):
            continue
        c = rng.random(n_e)
        y = int(rng.integers(K - n_e))
        fd = numeric_grad(lambda v: surrogate(spec, v, y, c), s)
        np.testing.assert_allclose(surrogate_gradient(spec, s, y, c), fd, rtol=1e-5, atol=1e-7)
        checked += 1


def test_constrained_spec_rejects_nonzero_sum():
    with pytest.raises(ConstraintError):
        surrogate_loss(parse_spec("cstnd_hinge"), [1.0, 0.0, 0.0], 0, [0.5])


def test_exponent_clamp_warns():
    with pytest.warns(RuntimeWarning, match="clamped"):
        L, _ = weighted_loss_grad(parse_spec("sum_exp"), [[-50.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]])
    assert np.isfinite(L).all()


def test_no_warning_in_normal_range():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        weighted_loss_grad(parse_spec("exp"), np.zeros((2, 4)), np.ones((2, 4)))


def test_surrogate_weights():
    W = surrogate_weights([1, 0], np.array([[0.2, 1.0], [0.0, 0.5]]), 3)
    np.testing.assert_allclose(W, [[0, 1, 0, 0.8, 0.0], [1, 0, 0, 1.0, 0.5]])
    with pytest.raises(InvalidLabelError):
        surrogate_weights([3], [[0.1]], 3)


# -- projection -----------------------------------------------------------------


def test_project_constraint():
    np.testing.assert_allclose(project_constraint([1, 2, 3, 4, 5]), [-2, -1, 0, 1, 2])
    s = np.array([1.0, -0.5, -0.5])
    np.testing.assert_array_equal(project_constraint(s), s)
    np.testing.assert_array_equal(project_constraint([3.0] * 4), np.zeros(4))


# -- spec parsing -----------------------------------------------------------------


def test_parse_all_tokens_round_trip():
    assert len(ALL_SPECS) == 11
    for tok in VALID_TOKENS:
        assert parse_spec(tok).token == tok
    assert parse_spec("gce:0.5").alpha == 0.5
    assert parse_spec("gce").alpha == 0.7
    assert parse_spec("sum_rho:2").rho == 2.0
    assert parse_spec(parse_spec("cstnd_rho:0.5").token) == parse_spec("cstnd_rho:0.5")


@pytest.mark.parametrize("bad", ["logg", "mae:0.3", "gce:1.5", "gce:0", "sum_rho:-1"])
def test_parse_errors(bad):
    with pytest.raises(SpecParseError):
        parse_spec(bad)


def test_unknown_token_lists_valid_ones():
    with pytest.raises(SpecParseError, match="cstnd_hinge"):
        parse_spec("hinge")


def test_spec_family_variant_mismatch():
    with pytest.raises(SpecParseError):
        SurrogateSpec("sum", "log")
    with pytest.raises(SpecParseError):
        SurrogateSpec("comp_sum", "log", alpha=0.5)


# -- Gamma transforms -------------------------------------------------------------

# bound column of the comp-sum, sum and constrained tables, as
# (shape, coefficient) with n taken as the number of classes
TABLE = {
    "exp": ("sqrt", lambda n: 2.0), "log": ("sqrt", lambda n: 2.0),
    "gce": ("sqrt", lambda n: 2.0 * n ** 0.7), "mae": ("linear", lambda n: float(n)),
    "sum_sq": ("sqrt", lambda n: 1.0), "sum_exp": ("sqrt", lambda n: 2.0),
    "sum_rho": ("linear", lambda n: 1.0), "cstnd_hinge": ("linear", lambda n: 1.0),
    "cstnd_sq": ("sqrt", lambda n: 1.0), "cstnd_exp": ("sqrt", lambda n: 2.0),
    "cstnd_rho": ("linear", lambda n: 1.0),
}


@pytest.mark.parametrize("tok", VALID_TOKENS)
def test_gamma_matches_published_table_with_base_count(tok):
    space = LabelSpace(10, 2)
    g = gamma_of(parse_spec(tok), space, classes="base")
    shape, coef = TABLE[tok]
    assert g.shape == shape
    assert g.coefficient == pytest.approx(coef(10))


def test_log_simplified_bound():
    g = gamma_of(LOG, LabelSpace(10, 2))
    for eps in (0.0, 0.01, 0.5):
        assert g.simplified_bound(eps, 2) == pytest.approx(3 * math.sqrt(2) * math.sqrt(eps))


def test_mae_linear_bound_without_constants():
    g = gamma_of(parse_spec("mae"), LabelSpace(10, 2), classes="base")
    assert g.removes_constants
    assert g.bound(0.1, 2, 0.3, 1.7) == pytest.approx(1.0)
    assert gamma_of(parse_spec("cstnd_hinge"), LabelSpace(10, 2)).bound(0.1, 2, 0, 2) == pytest.approx(0.1)


def test_augmented_count_is_default():
    space = LabelSpace(10, 2)
    assert gamma_of(parse_spec("mae"), space).coefficient == 12.0
    assert gamma_of(parse_spec("gce"), space).coefficient == pytest.approx(2 * 12 ** 0.7)
    with pytest.raises(ValueError):
        gamma_of(LOG, space, classes="other")


def test_sqrt_bound_constants():
    g = gamma_of(LOG, LabelSpace(3, 2))
    assert g.bound(0.5, 2, 0.2, 1.0) == pytest.approx((3 - 0.2) * math.sqrt(2 * 0.5 / (3 - 1.0)))
    assert g(-1.0) == 0.0
