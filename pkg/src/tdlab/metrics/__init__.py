"""First-order measurements on checkpoints: interference, gains, statistics."""

from .gain import (DEFAULT_OFFSETS, GainCurve, mean_off_center, sign_variance, sign_variance_of,
                   stiffness_curve, td_gain_curve, trajectory_index, update_gains)
from .interference import (InterferenceRecord, cosine, loss_grad, output_grad, pair_record,
                           pair_sample_metrics, prediction_grad, rho, rho_bar, stiffness)
from .io import (GAIN_HEADER, INTERFERENCE_HEADER, SCALARS_HEADER, STIFFNESS_HEADER, gain_csv,
                 interference_csv, read_csv, scalars_csv, stiffness_csv)
from .stats import gap, generalization_gap, pearson_r, singular_spread, singular_values

__all__ = [
    "DEFAULT_OFFSETS", "GainCurve", "mean_off_center", "sign_variance", "sign_variance_of",
    "stiffness_curve", "td_gain_curve", "trajectory_index", "update_gains", "InterferenceRecord", "cosine", "loss_grad", "output_grad",
    "pair_record", "pair_sample_metrics", "prediction_grad", "rho", "rho_bar", "stiffness",
    "GAIN_HEADER", "INTERFERENCE_HEADER", "SCALARS_HEADER", "STIFFNESS_HEADER", "stiffness_csv", "gain_csv",
    "interference_csv",
    "read_csv", "scalars_csv", "gap", "generalization_gap", "pearson_r", "singular_spread",
    "singular_values",
]
