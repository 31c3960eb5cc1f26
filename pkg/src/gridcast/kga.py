"""Per-cell GRU array with convolutional spatio-pooling and label feedback.

One logical GRU cell sits on every grid cell, all sharing a single weight
set, so the recurrent step mixes nothing spatially; spatial context enters
through a convolutional encoder in front and a convolutional decoder that
pools neighbouring hidden states into an occupancy probability.  The
previous step's thresholded prediction is fed back alongside the next
measurement, giving the network a prediction-correction loop: when the
measurement is unreliable it can lean on its own last belief.

Checkpoint format "KGAW1": magic, u32 scalar count, then float64 values in
the order encoder kernel, encoder bias, W_z, U_z, b_z, W_r, U_r, b_r, W_h,
U_h, b_h, decoder kernel, decoder bias (each array row-major).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataio import read_param_blob, write_param_blob
from .errors import ShapeMismatchError

HIDDEN_DIM = 16
ENCODER_CHANNELS = 16
ENCODER_KERNEL = 6
DECODER_KERNEL = 6

KGA_MAGIC = b"KGAW1"


@dataclass
class KgaParams:
    enc_kernel: Tensor  # (16, 2, 6, 6)
    enc_bias: Tensor  # (16,)
    w_z: Tensor  # (16, 16) input map
    u_z: Tensor  # (16, 16) hidden map
    b_z: Tensor  # (16,)
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor
    dec_kernel: Tensor  # (2, 16, 6, 6)
    dec_bias: Tensor  # (2,)

    def tensors(self) -> list[tuple[str, Tensor]]:
        """Parameters in checkpoint order."""
        return [
            ("enc_kernel", self.enc_kernel),
            ("enc_bias", self.enc_bias),
            ("w_z", self.w_z),
            ("u_z", self.u_z),
            ("b_z", self.b_z),
            ("w_r", self.w_r),
            ("u_r", self.u_r),
            ("b_r", self.b_r),
            ("w_h", self.w_h),
            ("u_h", self.u_h),
            ("b_h", self.b_h),
            ("dec_kernel", self.dec_kernel),
            ("dec_bias", self.dec_bias),
        ]


KGA_SHAPES = [
    (ENCODER_CHANNELS, 2, ENCODER_KERNEL, ENCODER_KERNEL),
    (ENCODER_CHANNELS,),
    (HIDDEN_DIM, HIDDEN_DIM),
    (HIDDEN_DIM, HIDDEN_DIM),
    (HIDDEN_DIM,),
    (HIDDEN_DIM, HIDDEN_DIM),
    (HIDDEN_DIM, HIDDEN_DIM),
    (HIDDEN_DIM,),
    (HIDDEN_DIM, HIDDEN_DIM),
    (HIDDEN_DIM, HIDDEN_DIM),
    (HIDDEN_DIM,),
    (2, ENCODER_CHANNELS, DECODER_KERNEL, DECODER_KERNEL),
    (2,),
]


def fan_in_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """Weights uniform on +-sqrt(1/fan_in); fan_in is all but the first axis."""
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_kga_params(seed: int = 0) -> KgaParams:
    """Random weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x6B6761])
    arrays = [
        fan_in_uniform(rng, shape) if len(shape) > 1 else np.zeros(shape)
        for shape in KGA_SHAPES
    ]
    return KgaParams(*[Tensor(a) for a in arrays])


@dataclass
class KgaState:
    """Recurrent state: one hidden row per grid cell plus the fed-back label."""

    height: int
    width: int
    hidden: Tensor  # (height*width, HIDDEN_DIM)
    prev_label: np.ndarray  # (height, width) uint8

    def hidden_field(self) -> np.ndarray:
        """Hidden activations as an H×W×16 array, for inspection/export."""
        return self.hidden.values.reshape(self.height, self.width, HIDDEN_DIM)


def initial_state(height: int, width: int) -> KgaState:
    """Hidden at the sigmoid midpoint, no previous prediction."""
    if height < 1 or width < 1:
        raise ShapeMismatchError(f"invalid extent {height}x{width}")
    return KgaState(
        height=height,
        width=width,
        hidden=Tensor(np.full((height * width, HIDDEN_DIM), 0.5)),
        prev_label=np.zeros((height, width), dtype=np.uint8),
    )


def encode(measurement: np.ndarray, prev_label: np.ndarray, params) -> Tensor:
    """Stack [measurement; previous label], convolve, squash."""
    measurement = np.asarray(measurement, dtype=np.float64)
    prev_label = np.asarray(prev_label, dtype=np.float64)
    if measurement.shape != prev_label.shape:
        raise ShapeMismatchError(
            f"measurement {measurement.shape} vs label {prev_label.shape}"
        )
    stacked = ad.stack_channels([Tensor(measurement), Tensor(prev_label)])
    return ad.sigmoid(ad.conv2d(stacked, params.enc_kernel, params.enc_bias))


def gru_array_step(features: Tensor, hidden: Tensor, params: KgaParams) -> Tensor:
    """One shared-weight GRU update per cell; no spatial mixing.

    z = s(W_z x + U_z h + b_z), r = s(W_r x + U_r h + b_r),
    cand = s(W_h x + U_h (r*h) + b_h), h' = (1-z)*h + z*cand.
    """
    c, height, width = features.shape
    if hidden.shape != (height * width, HIDDEN_DIM) or c != ENCODER_CHANNELS:
        raise ShapeMismatchError(
            f"gru_array_step: features {features.shape} vs hidden {hidden.shape}"
        )
    x = ad.channels_to_rows(features)
    z = ad.sigmoid(
        ad.add_rowvec(
            ad.add(
                ad.matmul(x, params.w_z, transpose_b=True),
                ad.matmul(hidden, params.u_z, transpose_b=True),
            ),
            params.b_z,
        )
    )
    r = ad.sigmoid(
        ad.add_rowvec(
            ad.add(
                ad.matmul(x, params.w_r, transpose_b=True),
                ad.matmul(hidden, params.u_r, transpose_b=True),
            ),
            params.b_r,
        )
    )
    cand = ad.sigmoid(
        ad.add_rowvec(
            ad.add(
                ad.matmul(x, params.w_h, transpose_b=True),
                ad.matmul(ad.mul(r, hidden), params.u_h, transpose_b=True),
            ),
            params.b_h,
        )
    )
    return ad.add(ad.mul(ad.affine(z, -1.0, 1.0), hidden), ad.mul(z, cand))


def decode_field(hidden_field: Tensor, params) -> Tensor:
    """Pool a 16×H×W hidden field into the occupancy probability plane."""
    logits = ad.conv2d(hidden_field, params.dec_kernel, params.dec_bias)
    return ad.take_channel(ad.softmax_channels(logits), 0)


def decode(hidden: Tensor, params, height: int, width: int) -> Tensor:
    return decode_field(ad.rows_to_channels(hidden, height, width), params)


def threshold(prob, level: float = 0.5) -> np.ndarray:
    """Hard labels: 1 where probability >= level."""
    if not 0.0 < level < 1.0:
        raise ShapeMismatchError(f"threshold level must be in (0,1), got {level}")
    values = prob.values if isinstance(prob, Tensor) else np.asarray(prob)
    return (values >= level).astype(np.uint8)


def kga_step(
    measurement: np.ndarray, state: KgaState, params: KgaParams
) -> tuple[Tensor, KgaState]:
    """One prediction-correction step; the new state carries the hard label."""
    measurement = np.asarray(measurement)
    if measurement.shape != (state.height, state.width):
        raise ShapeMismatchError(
            f"measurement {measurement.shape} vs state "
            f"{(state.height, state.width)}"
        )
    features = encode(measurement, state.prev_label, params)
    hidden = gru_array_step(features, state.hidden, params)
    prob = decode(hidden, params, state.height, state.width)
    new_state = KgaState(
        height=state.height,
        width=state.width,
        hidden=hidden,
        prev_label=threshold(prob),
    )
    return prob, new_state


class KalmanGruArray:
    """Bundled parameters plus the stepping/rollout API used by training."""

    name = "KGA"
    magic = KGA_MAGIC
    shapes = KGA_SHAPES

    def __init__(self, params: KgaParams):
        self.params = params

    @classmethod
    def init(cls, seed: int = 0) -> "KalmanGruArray":
        return cls(init_kga_params(seed))

    def initial_state(self, height: int, width: int) -> KgaState:
        return initial_state(height, width)

    def step(self, measurement, state):
        return kga_step(measurement, state, self.params)

    def rollout(self, measurements, collect_hidden: bool = False):
        """Predictions for each input frame; output t targets truth t+1."""
        measurements = list(measurements)
        if not measurements:
            raise ShapeMismatchError("rollout needs at least one measurement")
        height, width = np.asarray(measurements[0]).shape
        state = self.initial_state(height, width)
        probs = []
        hiddens = []
        for m in measurements:
            prob, state = self.step(m, state)
            probs.append(prob)
            if collect_hidden:
                hiddens.append(state.hidden_field().copy())
        if collect_hidden:
            return probs, hiddens
        return probs

    def param_tensors(self) -> list[Tensor]:
        return [t for _, t in self.params.tensors()]

    def count_params(self) -> int:
        return sum(t.size for t in self.param_tensors())

    def save(self, path) -> None:
        write_param_blob(self.magic, [t.values for t in self.param_tensors()], path)

    @classmethod
    def load(cls, path) -> "KalmanGruArray":
        arrays = read_param_blob(cls.magic, cls.shapes, path)
        return cls(KgaParams(*[Tensor(a) for a in arrays]))
