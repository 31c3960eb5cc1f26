"""Occupancy-grid anticipation under miss and shift noise.

A per-cell GRU array with convolutional spatio-pooling and hard-label
feedback learns to predict the next occupancy frame from corrupted
measurements; a convolutional-GRU baseline, a Boids-style data generator,
a noise pipeline, bit-exact container formats, and a training/evaluation
harness round out the package.
"""

from .autodiff import (
    RmsPropState,
    Tensor,
    backward,
    bce_loss,
    conv2d,
    no_grad,
    rmsprop_step,
    sigmoid,
    softmax_channels,
    zero_grads,
)
from .boids import Agent, SceneObject, WorldConfig, avoidance_step, init_world, rasterize, simulate_objects
from .convgru import ConvGruBaseline, ConvGruParams, center_tap_params, convgru_step
from .dataio import (
    SequenceRecord,
    TrackRow,
    build_sequence,
    export_frames,
    export_gray_frames,
    read_ogsq,
    read_tracks_csv,
    tracks_to_sequence,
    write_ogsq,
    write_tracks_csv,
)
from .errors import (
    ConfigError,
    DataFormatError,
    GridcastError,
    NanGradientError,
    ShapeMismatchError,
    SimulationError,
    TrainingDivergedError,
)
from .evaluation import (
    BenchResult,
    ConditionResult,
    bench_latency,
    naive_baselines,
    run_condition_table,
)
from .kga import (
    KalmanGruArray,
    KgaParams,
    KgaState,
    decode,
    encode,
    gru_array_step,
    initial_state,
    threshold,
)
from .noise import NoiseConfig, apply_miss, apply_shift, corrupt_frame
from .training import TrainConfig, TrainReport, evaluate, sequence_loss, train

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "BenchResult",
    "ConditionResult",
    "ConfigError",
    "ConvGruBaseline",
    "ConvGruParams",
    "DataFormatError",
    "GridcastError",
    "KalmanGruArray",
    "KgaParams",
    "KgaState",
    "NanGradientError",
    "NoiseConfig",
    "RmsPropState",
    "SceneObject",
    "SequenceRecord",
    "ShapeMismatchError",
    "SimulationError",
    "Tensor",
    "TrackRow",
    "TrainConfig",
    "TrainReport",
    "TrainingDivergedError",
    "WorldConfig",
    "apply_miss",
    "apply_shift",
    "avoidance_step",
    "backward",
    "bce_loss",
    "bench_latency",
    "build_sequence",
    "center_tap_params",
    "conv2d",
    "convgru_step",
    "corrupt_frame",
    "decode",
    "encode",
    "evaluate",
    "export_frames",
    "export_gray_frames",
    "gru_array_step",
    "init_world",
    "initial_state",
    "naive_baselines",
    "no_grad",
    "rasterize",
    "read_ogsq",
    "read_tracks_csv",
    "rmsprop_step",
    "run_condition_table",
    "sequence_loss",
    "sigmoid",
    "simulate_objects",
    "softmax_channels",
    "threshold",
    "tracks_to_sequence",
    "train",
    "write_ogsq",
    "write_tracks_csv",
    "zero_grads",
]
