"""divlab: variational skew-divergence estimation and its benchmark suite.

Submodules
----------
numcore        MLPs with manual backprop, Adam
distributions  correlated-Gaussian pairs, exact MI and density ratio
objectives     DV/MINE, CPC, MLCPC, RMLCPC, NWJ estimators and gradients
mi_recovery    MI recovery from skew-trained critics
trainer        MI staircase training loop
variance_lab   oracle-critic variance sweeps and quadrature ground truth
ssl_harness    momentum-contrast training on synthetic clusters
cli            the `divlab` command line
"""

__version__ = "0.1.0"

from .distributions import (
    GaussianPairSpec,
    PairBatch,
    StaircaseSchedule,
    analytic_mi,
    log_density_ratio,
    rho_for_mi,
    sample_pair_batch,
    skew_log_ratio,
)
from .mi_recovery import RatioEstimate, SkewInversionError, estimate_mi
from .numcore import AdamConfig, CriticNet, Mlp, NonFiniteError, ShapeError
from .objectives import (
    ObjectiveKind,
    ObjectiveOutput,
    ObjectiveSpec,
    ScoreTable,
    cpc_value,
    dv_value,
    extract_pos_neg,
    mine_value,
    mlcpc_value,
    nwj_value,
    objective_output,
    objective_value,
    renyi_dv_value,
    rmlcpc_value,
    surrogate_grads,
)
from .trainer import RunRecord, TrainConfig, TrainResult, eval_objective_trace, train
from .variance_lab import (
    VarianceReport,
    bias_check,
    renyi_lower_bound,
    variance_sweep,
)

__all__ = [name for name in dir() if not name.startswith("_")]
