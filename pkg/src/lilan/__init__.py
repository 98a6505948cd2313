"""Flow-map surrogates with analytically solvable linear latent dynamics.

The package covers the full pipeline: stiff reference integrators for
data generation, the surrogate model in four wiring variants, losses
and training, evaluation metrics, the speed benchmark, and the study
drivers, all behind one CLI (`lilan`).
"""

__version__ = "0.1.0"

from .datasets import TrajectoryDataset, coarsen_time, generate, load, save, subsample
from .evaluation import (
    EvalReport,
    evaluate_model,
    metric_r1,
    metric_r2,
    run_study,
    speed_benchmark,
)
from .integrators import (
    ImplicitSolverConfig,
    SemilinearOperator,
    circulant_eigenvalues,
    etdrk4_solve,
    phi_coefficients,
    solve_stiff,
)
from .model import (
    EmbeddingPair,
    LiLaNModel,
    build_direct_equivalent,
    build_model,
    embed,
    embed_inverse,
    latent_solution,
    load_model,
    make_embedding,
    model_param_count,
    predict,
    predict_batch,
    predict_no_tau,
    save_model,
)
from .nets import AdamState, GradTape, Mlp, adam_step, backward, forward, init_mlp
from .problems import (
    ProblemSpec,
    allen_cahn_problem,
    cahn_hilliard_problem,
    get_problem,
    robertson_problem,
)
from .training import (
    TrainConfig,
    TrainResult,
    loss_abs_relative,
    loss_exp_product,
    loss_rel_l2,
    train,
)
from .transforms import TransformSpec, fit_transforms, identity_transforms
