from .batched import (BatchEstimate, gumbel_softmax_batched, indecater_batched,
                      reinforce_batched, rloo_batched)
from .config import (AnnealSchedule, GradientEstimator, GumbelSoftmax, Indecater, Leg,
                     Reinforce, Rloo, Scater, VARIANTS, anneal, make_estimator)
from .evaluation import (BiasVarianceReport, MomentAccumulator, bias_variance,
                         gradient_variance_probe, run_trials)
from .factored import (GradEstimate, gumbel_noise, gumbel_softmax_grad,
                       gumbel_softmax_sample, gumbel_softmax_trials, indecater,
                       indecater_trials, leg, leg_trials, leg_weights, reinforce,
                       reinforce_trials, rloo, rloo_trials, scater, scater_trials)

__all__ = [
    "AnnealSchedule", "BatchEstimate", "BiasVarianceReport", "GradEstimate",
    "GradientEstimator", "GumbelSoftmax", "Indecater", "Leg", "MomentAccumulator",
    "Reinforce", "Rloo", "Scater", "VARIANTS", "anneal", "bias_variance",
    "gradient_variance_probe", "gumbel_noise", "gumbel_softmax_batched", "gumbel_softmax_grad",
    "gumbel_softmax_sample", "gumbel_softmax_trials", "indecater",
    "indecater_batched", "indecater_trials", "leg", "leg_trials", "leg_weights",
    "make_estimator", "reinforce", "reinforce_batched", "reinforce_trials", "rloo",
    "rloo_batched", "rloo_trials", "run_trials", "scater", "scater_trials",
]
