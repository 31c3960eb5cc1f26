"""Convolutional-GRU baseline: gate maps mix 3×3 spatial neighbourhoods.

Same encoder and decoder as the per-cell GRU array; only the recurrent core
differs, replacing each 16×16 matrix product with a same-padded 3×3
convolution over the corresponding field.  With kernels that are zero
outside the center tap the two cores compute identical updates, which pins
down the correspondence exactly.

Checkpoint format "CGRW1": magic, u32 scalar count, then float64 values in
the order encoder kernel, encoder bias, then for each gate z, r, candidate:
input kernel, hidden kernel, bias; then decoder kernel, decoder bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataio import read_param_blob, write_param_blob
from .errors import ShapeMismatchError
from .kga import (
    DECODER_KERNEL,
    ENCODER_CHANNELS,
    ENCODER_KERNEL,
    HIDDEN_DIM,
    KgaParams,
    decode_field,
    encode,
    fan_in_uniform,
    threshold,
)

GATE_KERNEL = 3
CONVGRU_MAGIC = b"CGRW1"


@dataclass
class ConvGruParams:
    enc_kernel: Tensor  # (16, 2, 6, 6)
    enc_bias: Tensor
    wk_z: Tensor  # (16, 16, 3, 3) input kernel
    uk_z: Tensor  # (16, 16, 3, 3) hidden kernel
    b_z: Tensor
    wk_r: Tensor
    uk_r: Tensor
    b_r: Tensor
    wk_h: Tensor
    uk_h: Tensor
    b_h: Tensor
    dec_kernel: Tensor  # (2, 16, 6, 6)
    dec_bias: Tensor

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [
            ("enc_kernel", self.enc_kernel),
            ("enc_bias", self.enc_bias),
            ("wk_z", self.wk_z),
            ("uk_z", self.uk_z),
            ("b_z", self.b_z),
            ("wk_r", self.wk_r),
            ("uk_r", self.uk_r),
            ("b_r", self.b_r),
            ("wk_h", self.wk_h),
            ("uk_h", self.uk_h),
            ("b_h", self.b_h),
            ("dec_kernel", self.dec_kernel),
            ("dec_bias", self.dec_bias),
        ]


_GATE_SHAPE = (HIDDEN_DIM, HIDDEN_DIM, GATE_KERNEL, GATE_KERNEL)

CONVGRU_SHAPES = [
    (ENCODER_CHANNELS, 2, ENCODER_KERNEL, ENCODER_KERNEL),
    (ENCODER_CHANNELS,),
    _GATE_SHAPE,
    _GATE_SHAPE,
    (HIDDEN_DIM,),
    _GATE_SHAPE,
    _GATE_SHAPE,
    (HIDDEN_DIM,),
    _GATE_SHAPE,
    _GATE_SHAPE,
    (HIDDEN_DIM,),
    (2, ENCODER_CHANNELS, DECODER_KERNEL, DECODER_KERNEL),
    (2,),
]


def init_convgru_params(seed: int = 0) -> ConvGruParams:
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x636772])
    arrays = [
        fan_in_uniform(rng, shape) if len(shape) > 1 else np.zeros(shape)
        for shape in CONVGRU_SHAPES
    ]
    return ConvGruParams(*[Tensor(a) for a in arrays])


@dataclass
class ConvGruState:
    height: int
    width: int
    hidden: Tensor  # (HIDDEN_DIM, height, width)
    prev_label: np.ndarray

    def hidden_field(self) -> np.ndarray:
        return np.moveaxis(self.hidden.values, 0, 2)


def convgru_initial_state(height: int, width: int) -> ConvGruState:
    if height < 1 or width < 1:
        raise ShapeMismatchError(f"invalid extent {height}x{width}")
    return ConvGruState(
        height=height,
        width=width,
        hidden=Tensor(np.full((HIDDEN_DIM, height, width), 0.5)),
        prev_label=np.zeros((height, width), dtype=np.uint8),
    )


def convgru_step(features: Tensor, hidden: Tensor, params: ConvGruParams) -> Tensor:
    """GRU update where every matrix product is a same-padded convolution."""
    if features.shape != hidden.shape or features.shape[0] != ENCODER_CHANNELS:
        raise ShapeMismatchError(
            f"convgru_step: features {features.shape} vs hidden {hidden.shape}"
        )
    z = ad.sigmoid(
        ad.add_chanvec(
            ad.add(ad.conv2d(features, params.wk_z), ad.conv2d(hidden, params.uk_z)),
            params.b_z,
        )
    )
    r = ad.sigmoid(
        ad.add_chanvec(
            ad.add(ad.conv2d(features, params.wk_r), ad.conv2d(hidden, params.uk_r)),
            params.b_r,
        )
    )
    cand = ad.sigmoid(
        ad.add_chanvec(
            ad.add(
                ad.conv2d(features, params.wk_h),
                ad.conv2d(ad.mul(r, hidden), params.uk_h),
            ),
            params.b_h,
        )
    )
    return ad.add(ad.mul(ad.affine(z, -1.0, 1.0), hidden), ad.mul(z, cand))


def convgru_model_step(
    measurement: np.ndarray, state: ConvGruState, params: ConvGruParams
) -> tuple[Tensor, ConvGruState]:
    measurement = np.asarray(measurement)
    if measurement.shape != (state.height, state.width):
        raise ShapeMismatchError(
            f"measurement {measurement.shape} vs state {(state.height, state.width)}"
        )
    features = encode(measurement, state.prev_label, params)
    hidden = convgru_step(features, state.hidden, params)
    prob = decode_field(hidden, params)
    new_state = ConvGruState(
        height=state.height,
        width=state.width,
        hidden=hidden,
        prev_label=threshold(prob),
    )
    return prob, new_state


def center_tap_params(kga_params: KgaParams) -> ConvGruParams:
    """Gate kernels zero outside the center tap, sharing the given matrices."""
    center = GATE_KERNEL // 2

    def lift(matrix: Tensor) -> Tensor:
        kernel = np.zeros(_GATE_SHAPE)
        kernel[:, :, center, center] = matrix.values
        return Tensor(kernel)

    return ConvGruParams(
        enc_kernel=Tensor(kga_params.enc_kernel.values.copy()),
        enc_bias=Tensor(kga_params.enc_bias.values.copy()),
        wk_z=lift(kga_params.w_z),
        uk_z=lift(kga_params.u_z),
        b_z=Tensor(kga_params.b_z.values.copy()),
        wk_r=lift(kga_params.w_r),
        uk_r=lift(kga_params.u_r),
        b_r=Tensor(kga_params.b_r.values.copy()),
        wk_h=lift(kga_params.w_h),
        uk_h=lift(kga_params.u_h),
        b_h=Tensor(kga_params.b_h.values.copy()),
        dec_kernel=Tensor(kga_params.dec_kernel.values.copy()),
        dec_bias=Tensor(kga_params.dec_bias.values.copy()),
    )


class ConvGruBaseline:
    """Same API as the GRU-array model, with the convolutional core."""

    name = "ConvGRU"
    magic = CONVGRU_MAGIC
    shapes = CONVGRU_SHAPES

    def __init__(self, params: ConvGruParams):
        self.params = params

    @classmethod
    def init(cls, seed: int = 0) -> "ConvGruBaseline":
        return cls(init_convgru_params(seed))

    def initial_state(self, height: int, width: int) -> ConvGruState:
        return convgru_initial_state(height, width)

    def step(self, measurement, state):
        return convgru_model_step(measurement, state, self.params)

    def rollout(self, measurements, collect_hidden: bool = False):
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
    def load(cls, path) -> "ConvGruBaseline":
        arrays = read_param_blob(cls.magic, cls.shapes, path)
        return cls(ConvGruParams(*[Tensor(a) for a in arrays]))
