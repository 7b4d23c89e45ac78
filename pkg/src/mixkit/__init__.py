"""MixIT losses, over-separation regularizers and separation metrics."""

from .estimator import MixITSeparator
from .metrics import (
    EvalExample,
    MetricsReport,
    active_source_count,
    hungarian_assign,
    momi,
    msi,
    one_s,
)
from .mixit import (
    MixitResult,
    efficient_mixit,
    exhaustive_mixit,
    least_squares_mixing,
    mixit,
    mixit_loss_gradient,
    project_to_binary,
)
from .optimizer import LossConfig, optimize_estimates, total_loss_and_grad
from .regularizers import covariance_loss, sparsity_l1, sparsity_l1_l2
from .semantic import (
    BandEnergyClassifier,
    aggregate_or,
    aggregate_xor,
    ce_loss,
    cosine_loss,
)
from .signal import (
    MixtureBatch,
    mixture_consistency_project,
    rms,
    si_snr,
    thresholded_snr_loss,
)

__version__ = "0.1.0"
