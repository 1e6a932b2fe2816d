"""Wideband beamspace mmWave channel simulation and learned channel estimation.

The package simulates frequency-selective lens-array channels with beam
squint, observes them through a one-bit pilot combiner, and estimates them
with classical sparse recovery (ISTA, OMP), an unrolled learned estimator,
and a hypernetwork-adaptive variant.  Training runs on hand-rolled
reverse-mode gradients with Adam; a CLI drives dataset generation, training,
evaluation, and benchmark sweeps.
"""

from .autodiff import ScalarSet, backward_batch, forward_batch
from .channel import (
    ComplexChannel,
    LensTransform,
    PathSet,
    array_response,
    beam_component,
    beamspace_channel,
    from_real_matrix,
    lens_transform,
    sample_paths,
    spatial_channel,
    spatial_direction,
    subcarrier_freq,
    to_real_matrix,
)
from .classical import (
    IstaConfig,
    OmpConfig,
    ista_estimate,
    omp_estimate,
    soft_threshold,
    tune_ista,
)
from .config import SystemConfig, default_config
from .datasets import ChannelDataset, generate_dataset, make_eval_observations
from .estimators import (
    HyperListaEstimator,
    IstaEstimator,
    ListaEstimator,
    NotFittedError,
    OmpEstimator,
    ZeroEstimator,
)
from .fileio import (
    FileFormatError,
    read_checkpoint,
    read_dataset,
    write_checkpoint,
    write_dataset,
)
from .hyper import (
    ConditionBounds,
    ConditionVector,
    HyperModel,
    HyperParams,
    estimate_condition,
    hyper_forward,
    init_hyper,
    train_aver,
    train_hyper,
)
from .measurement import (
    NoiseSpec,
    Observation,
    SelectionMatrix,
    gen_selection,
    nmse,
    nmse_batch,
    observe,
    snr_to_sigma,
    to_db,
)
from .network import (
    ListaParams,
    NetConfig,
    forward,
    init_params,
    param_count,
)
from .training import (
    AdamState,
    EvalResult,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    adam_step,
    evaluate,
    loss,
    train,
)

__version__ = "0.1.0"
