"""Numerical checks of translation and rotation equivariance.

* ``translation``: Cartesian encoder commutes with integer translations.
* ``polar_roll``: the polar transform turns a lattice rotation into a column roll.
* ``branch_rotation``: the polar branch (transform + encoder) turns a rotation into a
  stage-scaled column roll.

Only exact lattice actions are checked, with valid (unpadded) convolutions,
and comparisons are restricted to the positions whose receptive field is
untouched by the zero fill of a translation or the wrap of a roll.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import ContractError
from .model import Encoder, ModelConfig
from .polar import PolarGridSpec, polar_transform

TOLERANCES = {"translation": 1e-12, "polar_roll": 1e-9, "branch_rotation": 1e-6}


@dataclass(frozen=True)
class GroupAction:
    kind: str
    shift: tuple[int, int] = (0, 0)
    angle: int = 0

    def __post_init__(self):
        if self.kind not in ("translation", "rotation"):
            raise ContractError(f"unknown action kind {self.kind!r}")
        if self.kind == "rotation" and self.angle % 90:
            raise ContractError(f"only lattice rotations (multiples of 90), got {self.angle}")

    @classmethod
    def translation(cls, dy: int, dx: int) -> "GroupAction":
        return cls("translation", shift=(int(dy), int(dx)))

    @classmethod
    def rotation(cls, angle: int) -> "GroupAction":
        return cls("rotation", angle=int(angle))


@dataclass
class EquivarianceReport:
    prop: str
    stage: int
    max_error: float
    mean_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{self.prop:<4} stage={self.stage}  max={self.max_error:.3e}  "
                f"mean={self.mean_error:.3e}  tol={self.tolerance:.0e}  {flag}")


def _shift_axis(x: np.ndarray, d: int, axis: int) -> np.ndarray:
    out = np.zeros_like(x)
    n = x.shape[axis]
    if abs(d) >= n:
        return out
    src = [slice(None)] * x.ndim
    dst = [slice(None)] * x.ndim
    if d >= 0:
        src[axis], dst[axis] = slice(0, n - d), slice(d, n)
    else:
        src[axis], dst[axis] = slice(-d, n), slice(0, n + d)
    out[tuple(dst)] = x[tuple(src)]
    return out


def apply_action(x, action: GroupAction) -> np.ndarray:
    """Act on the last two axes; translations zero-fill, rotations are
    clockwise lattice permutations (``[[a,b],[c,d]] -> [[c,a],[d,b]]``)."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    if action.kind == "translation":
        dy, dx = action.shift
        return _shift_axis(_shift_axis(x, dy, -2), dx, -1)
    if x.shape[-1] != x.shape[-2]:
        raise ContractError(f"rotation needs square spatial dims, got {x.shape[-2:]}")
    return np.rot90(x, k=-(action.angle // 90) % 4, axes=(-2, -1)).copy()


def receptive_fields(cfg: ModelConfig) -> list[tuple[int, int]]:
    """(receptive field, cumulative stride) at the output of each stage."""
    rf, jump = 1, 1
    out = []
    for s in range(cfg.num_stages):
        for i in range(cfg.convs_per_stage):
            stride = 2 if (s > 0 and i == 0) else 1
            rf += 2 * jump
            jump *= stride
        out.append((rf, jump))
    return out


def _aligned(n_out: int, n_in: int, shift: int, stride: int, rf: int,
             exact: bool) -> tuple[slice, slice]:
    """Slices (transformed, reference) of one axis that should agree."""
    s = shift // stride
    if not exact:
        return (slice(s, n_out), slice(0, n_out - s)) if s >= 0 \
            else (slice(0, n_out + s), slice(-s, n_out))
    if shift >= 0:
        return slice(s, n_out), slice(0, n_out - s)
    # window [p*stride, p*stride + rf - 1] must stay below n_in + shift
    last = (n_in + shift - rf) // stride
    hi = min(n_out + s, last + 1)
    return slice(0, max(hi, 0)), slice(-s, -s + max(hi, 0))


def _report(prop: str, stage: int, a: np.ndarray, b: np.ndarray,
            tolerance: Optional[float]) -> EquivarianceReport:
    diff = np.abs(a - b)
    tol = TOLERANCES[prop] if tolerance is None else tolerance
    if diff.size == 0:
        return EquivarianceReport(prop, stage, 0.0, 0.0, tol)
    return EquivarianceReport(prop, stage, float(diff.max()), float(diff.mean()), tol)


def _run_encoder(encoder: Optional[Encoder], x: np.ndarray) -> list[np.ndarray]:
    with no_grad():
        if encoder is None:
            return [x]
        return [t.data for t in encoder(Tensor(x))]


def check_translation(encoder: Encoder, cfg: ModelConfig, x: np.ndarray,
                      action: GroupAction, tolerance: Optional[float] = None) -> list[EquivarianceReport]:
    """Translation equivariance of a Cartesian encoder, one report per stage."""
    if action.kind != "translation":
        raise ContractError("check_translation needs a translation")
    stride = cfg.total_stride
    if any(d % stride for d in action.shift):
        raise ContractError(f"translation {action.shift} not a multiple of stride {stride}")
    exact = cfg.padding == "valid"
    ref = _run_encoder(encoder, x)
    moved = _run_encoder(encoder, apply_action(x, action))
    h, w = x.shape[-2:]
    reports = []
    for stage, ((rf, jump), a, b) in enumerate(zip(receptive_fields(cfg), moved, ref), 1):
        ra, rb = _aligned(a.shape[-2], h, action.shift[0], jump, rf, exact)
        ca, cb = _aligned(a.shape[-1], w, action.shift[1], jump, rf, exact)
        reports.append(_report("translation", stage, a[..., ra, ca], b[..., rb, cb], tolerance))
    return reports


def _roll_columns(angle: int, width: int) -> int:
    if width % 4:
        raise ContractError(f"polar width {width} not divisible by 4")
    return (angle // 90) % 4 * width // 4


def check_polar_roll(x: np.ndarray, angle: int, spec: Optional[PolarGridSpec] = None,
                     tolerance: Optional[float] = None) -> EquivarianceReport:
    """Polar transform of a rotated image against a column roll."""
    x = np.asarray(x)
    spec = spec or PolarGridSpec.default(*x.shape[-2:])
    shift = _roll_columns(angle, spec.out_w)
    with no_grad():
        a = polar_transform(Tensor(apply_action(x, GroupAction.rotation(angle))), spec).data
        b = np.roll(polar_transform(Tensor(x), spec).data, shift, axis=-1)
    # every bin's source radius is at most the radial extent, i.e. inside the circle
    inside = spec.radii()[:, None] <= min(spec.input_h, spec.input_w) / 2
    inside = np.broadcast_to(inside, (spec.out_h, spec.out_w))
    return _report("polar_roll", 0, a[..., inside], b[..., inside], tolerance)


def check_branch_rotation(encoder: Optional[Encoder], cfg: Optional[ModelConfig],
                          x: np.ndarray, angle: int,
                          tolerance: Optional[float] = None) -> list[EquivarianceReport]:
    """Rotation-to-roll equivariance of the polar branch, per stage.

    With ``encoder=None`` the branch is just the polar transform and the
    single report reduces to :func:`check_polar_roll` (labelled stage 0).
    """
    x = np.asarray(x)
    spec = PolarGridSpec.default(*x.shape[-2:])
    shift = _roll_columns(angle, spec.out_w)
    with no_grad():
        p = polar_transform(Tensor(x), spec).data
        p_rot = polar_transform(Tensor(apply_action(x, GroupAction.rotation(angle))), spec).data
    ref = _run_encoder(encoder, p)
    moved = _run_encoder(encoder, p_rot)
    if encoder is None:
        rolled = np.roll(ref[0], shift, axis=-1)
        return [_report("branch_rotation", 0, moved[0], rolled, tolerance)]
    # with zero padding the angular edges break the roll and the same overlap
    # then shows a nonzero error
    reports = []
    for stage, ((_, jump), a, b) in enumerate(zip(receptive_fields(cfg), moved, ref), 1):
        if shift % jump:
            raise ContractError(f"column shift {shift} not divisible by stage stride {jump}")
        s = shift // jump
        n = a.shape[-1]
        if s >= n:
            raise ContractError(f"stage {stage} is {n} columns wide, no overlap after a "
                                f"{s}-column roll; use a larger input")
        # outputs whose input window lies entirely in unwrapped columns
        reports.append(_report("branch_rotation", stage, a[..., s:n], b[..., 0:n - s], tolerance))
    return reports


def random_case(seed: int, size: int = 64, channels: Sequence[int] = (4, 8, 8),
                in_channels: int = 3) -> tuple[Encoder, ModelConfig, np.ndarray]:
    """Deterministic (encoder, config, input) triple for a seed, valid convs."""
    cfg = ModelConfig(input_size=size, in_channels=in_channels, channels=tuple(channels),
                      padding="valid")
    rng = np.random.default_rng(seed)
    enc = Encoder(cfg, rng)
    for conv in (c for stage in enc.stages for c in stage):
        conv.bias.data = rng.normal(0.0, 0.1, size=conv.bias.shape)
    x = rng.random((1, in_channels, size, size))
    return enc, cfg, x


def run_suite(seeds: Sequence[int], size: int = 64, rotation_size: int = 128,
              angles: Sequence[int] = (90, 180, 270)) -> list[EquivarianceReport]:
    reports: list[EquivarianceReport] = []
    for seed in seeds:
        enc, cfg, x = random_case(seed, size)
        t = cfg.total_stride
        for shift in ((t, t), (-t, 2 * t), (0, -t)):
            reports += check_translation(enc, cfg, x, GroupAction.translation(*shift))
        enc_r, cfg_r, x_r = random_case(seed, rotation_size)
        for angle in angles:
            reports.append(check_polar_roll(x_r, angle))
            reports += check_branch_rotation(enc_r, cfg_r, x_r, angle)
    return reports
