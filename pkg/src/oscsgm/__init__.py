"""Score-based generative modeling with driven networks of nonlinear
overdamped oscillators: energy family, local learning rules, and SDE
samplers."""

from .data import (
    Dataset,
    DisplacementMap,
    IdxFile,
    MixtureSpec,
    binarize,
    load_dataset,
    load_idx,
    mixture_density,
    mixture_marginal,
    mixture_sample,
    mnist_prepare,
    save_dataset,
    save_idx,
)
from .dynamics import (
    IntegratorConfig,
    equilibrium_sample,
    forward_kernel_sample,
    load_samples,
    relax_to_equilibrium,
    reverse_sample,
    save_samples,
)
from .errors import (
    IdxFormatError,
    IntegrationBlowupError,
    OscsgmError,
    ScheduleFormatError,
    TrainingDivergedError,
    ValidationError,
)
from .evaluate import (
    EnergyGrid,
    FidelityReport,
    ModeReport,
    ablation_run,
    energy_grid,
    fidelity_score,
    image_sheet,
    marginal_histogram,
    mode_weights,
)
from .learning import (
    CD1Config,
    CD1Gradient,
    TrainConfig,
    cd1_grad,
    force_matching_grad,
    sm_loss,
    train_schedule,
)
from .model import (
    EnergyParams,
    ParamIndex,
    ParamKind,
    Topology,
    basis_eval,
    energy_hat,
    flatten_params,
    force_hat,
    hessian_trace_hat,
    total_inference_force,
    unflatten_params,
)
from .rng import NoiseSource
from .schedule import Schedule, TimeGrid, load_schedule, save_schedule

__version__ = "0.1.0"
