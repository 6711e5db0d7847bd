"""Doubly robust decomposition of a mean difference between two groups.

The observed gap ``E[Y|D=1] - E[Y|D=0]`` is split into a part explained by
covariates and an unexplained part, relative to a reference outcome: the
disadvantaged group's (r=0), the advantaged group's (r=1), the
propensity-weighted equilibrium outcome (r=2) or the pooled regression with a
group dummy (r=3).
"""

__version__ = "0.1.0"

from .crossfit import FoldPlan, crossfit_estimate, crossfit_grid, split
from .dataset import DgpConfig, DgpTruth, Sample, generate_dgp, load_csv, oracle_truth
from .errors import (
    DecompError,
    DegenerateSampleError,
    EstimationError,
    ExcessiveFailuresError,
    MissingColumnError,
    NonConvergenceError,
    ParseError,
    SingularDesignError,
    TrimmingExhaustedError,
    UnsupportedCombinationError,
    ValidationError,
)
from .estimators import (
    DecompResult,
    EstimatorSpec,
    Reference,
    Strategy,
    decompose,
    decompose_grid,
    delta_aipw,
    delta_ipw,
    delta_obs,
    delta_reg,
    explained_aipw_r2,
    explained_reg,
    linear_explained_parts,
    make_grid,
    trim,
    weights,
)
from .inference import (
    ScoreVector,
    bootstrap_grid,
    bootstrap_pairs,
    orthogonality_check,
    scores,
    variance_from_scores,
)
from .nuisance import NuisanceConfig, NuisancePair, fit_nuisance
from .simulate import ExperimentSpec, figure1_curves, run_experiment, support_overlap_study, true_nuisance
