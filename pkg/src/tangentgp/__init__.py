"""Sparse function-space posteriors for trained MLPs.

Train a network, linearise it at the optimum, and read the result as a
sparse GP whose dual statistics summarise every training point.  The
posterior delivers calibrated predictive uncertainty, folds in new data
without retraining, and backs a function-space regulariser for sequential
tasks.
"""

from .continual import (
    ClConfig,
    MemoryBuffer,
    TaskMemory,
    build_task_memory,
    load_buffer,
    regularizer,
    run_continuum,
    save_buffer,
    train_task,
)
from .datasets import (
    Dataset,
    load_csv,
    make_banana,
    make_blobs,
    make_sine,
    make_split_tasks,
    ordered_split_for_update,
    split,
)
from .kernels import TangentKernel
from .likelihoods import Bernoulli, Categorical, Gaussian, Likelihood
from .linalg import CholeskyFactor, cholesky_jittered, solve_posdef
from .metrics import EvalReport, accuracy, auroc_entropy, ece, entropy, nlpd_gaussian, nlpd_probs
from .nets import (
    NetworkSpec,
    TrainConfig,
    Weights,
    forward,
    init_weights,
    jacobian,
    jacobian_batch,
    load_checkpoint,
    save_checkpoint,
    train_map,
)
from .posterior import (
    DualParams,
    InducingSet,
    SparsePosterior,
    dual_update,
    fit,
    fit_subset,
    full_gp_predict,
    load_posterior,
    sample_inducing,
    save_posterior,
)

__version__ = "0.1.0"
