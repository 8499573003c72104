"""Objectives, targets, optimizers and training loops."""

from .losses import (ddqn_loss, distill_losses, distill_samples, episode_returns, ql_loss,
                     reinforce_program, reinforce_step, td_lambda_loss)
from .objectives import Objective, Sample, gradient_field, sample_from_transition
from .optim import DEFAULTS, OptimizerState, make_optimizer, optimizer_step
from .targets import (LambdaTargetSet, TargetRule, TDErrorRecord, lambda_return_direct,
                      lambda_returns, lambda_weights, n_step_return, td0_target, td_error)
from .train import (Schedule, TrainResult, accuracy, evaluate_policy, greedy_rollouts, lambda_samples,
                    tabular_td0, train, train_online_q, train_reinforce)

__all__ = [
    "ddqn_loss", "distill_losses", "distill_samples", "episode_returns", "ql_loss",
    "reinforce_program", "reinforce_step", "td_lambda_loss", "Objective", "Sample",
    "gradient_field", "sample_from_transition", "DEFAULTS", "OptimizerState", "make_optimizer",
    "optimizer_step", "LambdaTargetSet", "TargetRule", "TDErrorRecord", "lambda_return_direct",
    "lambda_returns", "lambda_weights", "n_step_return", "td0_target", "td_error", "Schedule",
    "TrainResult", "accuracy", "evaluate_policy", "greedy_rollouts", "lambda_samples", "tabular_td0",
    "train", "train_online_q", "train_reinforce",
]
