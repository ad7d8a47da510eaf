"""Learning to defer with multiple experts: score-based surrogate losses,
their consistency bounds, and desk-scale training utilities."""

from .core import (
    ExpertPanel, FiniteDistribution, LabelSpace, QVector, build_q_vector, load_distribution,
    predict_label, q_matrix, save_distribution,
)
from .losses import (
    ALL_SPECS, GammaTransform, SurrogateSpec, deferral_loss, gamma_of, parse_spec, project_constraint,
    surrogate_gradient, surrogate_loss,
)
from .analysis import (
    ALL_MEASURABLE, HypothesisClassSpec, MinimizerSettings, ModelClass, binary_exp_gap,
    conditional_deferral, conditional_infimum, conditional_surrogate, estimate_rademacher,
    expected_losses, learning_bound_rhs, verify_bound,
)
from .training import (
    ScoreModel, SyntheticTaskSpec, TrainConfig, evaluate_system, generate_task, train,
)

__version__ = "0.1.0"
