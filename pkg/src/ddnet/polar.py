"""Differentiable Cartesian <-> polar resampling.

Coordinates are continuous with pixel ``k`` covering ``[k, k+1)``, so its
centre sits at ``k + 0.5`` and the default transform origin ``(H/2, W/2)``
is the geometric centre of the image.  Under this convention a 90 degree
lattice rotation (``np.rot90``) is an exact rotation about the origin.

Polar output row ``i`` is radius ``(i + 0.5) * R / out_h`` and column ``j`` is
angle ``-pi + 2*pi*(j + 0.5) / out_w`` with ``theta = atan2(u - u0, v - v0)``:
``u`` (rows) runs along sin(theta) and ``v`` (columns) along cos(theta).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, spatial_linear
from .errors import ContractError, DimensionError


@dataclass(frozen=True)
class PolarGridSpec:
    input_h: int
    input_w: int
    center: tuple[float, float]
    out_h: int
    out_w: int
    radial_extent: float

    def __post_init__(self):
        if min(self.input_h, self.input_w, self.out_h, self.out_w) < 1:
            raise ContractError(f"non-positive size in {self}")
        if not self.radial_extent > 0:
            raise ContractError("radial extent must be positive")

    @classmethod
    def default(cls, h: int, w: Optional[int] = None, out_h: Optional[int] = None,
                out_w: Optional[int] = None, radial_extent: Optional[float] = None,
                center: Optional[tuple[float, float]] = None) -> "PolarGridSpec":
        w = h if w is None else w
        return cls(int(h), int(w),
                   center if center is not None else (h / 2.0, w / 2.0),
                   int(out_h or h), int(out_w or w),
                   float(radial_extent if radial_extent is not None else min(h, w) / 2.0))

    def radii(self) -> np.ndarray:
        return (np.arange(self.out_h) + 0.5) * self.radial_extent / self.out_h

    def angles(self) -> np.ndarray:
        return -np.pi + 2 * np.pi * (np.arange(self.out_w) + 0.5) / self.out_w


@dataclass(frozen=True)
class SampleGrid:
    """Continuous source coordinates (pixel centres at ``k + 0.5``)."""
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    source_shape: tuple[int, int]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape


def build_polar_grid(spec: PolarGridSpec) -> SampleGrid:
    r = spec.radii()[:, None]
    theta = spec.angles()[None, :]
    u0, v0 = spec.center
    u = u0 + r * np.sin(theta)
    v = v0 + r * np.cos(theta)
    valid = (u >= 0) & (u <= spec.input_h) & (v >= 0) & (v <= spec.input_w)
    return SampleGrid(u, v, valid, (spec.input_h, spec.input_w))


def polar_coordinates(spec: PolarGridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Radius and angle of every Cartesian pixel centre."""
    u0, v0 = spec.center
    du = np.arange(spec.input_h)[:, None] + 0.5 - u0
    dv = np.arange(spec.input_w)[None, :] + 0.5 - v0
    r = np.sqrt(du ** 2 + dv ** 2)
    theta = np.arctan2(du, dv)
    return np.broadcast_to(r, (spec.input_h, spec.input_w)), theta


def build_inverse_grid(spec: PolarGridSpec) -> SampleGrid:
    """Where each Cartesian pixel reads from on the polar image."""
    r, theta = polar_coordinates(spec)
    u = r * spec.out_h / spec.radial_extent
    v = (theta + np.pi) * spec.out_w / (2 * np.pi)
    return SampleGrid(u, v, r <= spec.radial_extent, (spec.out_h, spec.out_w))


def inscribed_mask(spec: PolarGridSpec) -> np.ndarray:
    """Cartesian pixels whose centre lies within the radial extent."""
    r, _ = polar_coordinates(spec)
    return r <= spec.radial_extent


def _bilinear_matrix(grid: SampleGrid, angular_wrap: bool) -> sp.csr_matrix:
    h, w = grid.source_shape
    rows = grid.u.reshape(-1) - 0.5
    cols = grid.v.reshape(-1) - 0.5
    keep = grid.valid.reshape(-1)
    if angular_wrap:
        # polar source: radius clamps to the first/last ring, angle is periodic
        rows = np.clip(rows, 0.0, h - 1)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    out_idx = np.arange(rows.size)
    ii, jj, vals = [], [], []
    for dr, wr in ((0, 1.0 - fr), (1, fr)):
        for dc, wc in ((0, 1.0 - fc), (1, fc)):
            rr = r0 + dr
            cc = c0 + dc
            if angular_wrap:
                cc = np.mod(cc, w)
                inside = (rr >= 0) & (rr < h)
            else:
                inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            m = inside & keep
            ii.append(out_idx[m])
            jj.append(rr[m] * w + cc[m])
            vals.append((wr * wc)[m])
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(ii), np.concatenate(jj))),
                        shape=(rows.size, h * w))
    return mat.tocsr()


def bilinear_sample(image: Tensor, grid: SampleGrid, angular_wrap: bool = False) -> Tensor:
    """Bilinear resampling with zero padding; differentiable in ``image``."""
    image = image if isinstance(image, Tensor) else Tensor(image)
    if image.shape[2:] != grid.source_shape:
        raise DimensionError(f"grid built for {grid.source_shape}, image is {image.shape[2:]}")
    return spatial_linear(image, _bilinear_matrix(grid, angular_wrap), grid.shape)


@lru_cache(maxsize=64)
def _forward_matrix(spec: PolarGridSpec) -> sp.csr_matrix:
    return _bilinear_matrix(build_polar_grid(spec), angular_wrap=False)


@lru_cache(maxsize=64)
def _inverse_matrix(spec: PolarGridSpec) -> sp.csr_matrix:
    return _bilinear_matrix(build_inverse_grid(spec), angular_wrap=True)


def _check_input(x: Tensor, h: int, w: int) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 4 or x.shape[2:] != (h, w):
        raise DimensionError(f"expected [N,C,{h},{w}], got {x.shape}")
    return x


def polar_transform(x: Tensor, spec: PolarGridSpec) -> Tensor:
    x = _check_input(x, spec.input_h, spec.input_w)
    return spatial_linear(x, _forward_matrix(spec), (spec.out_h, spec.out_w))


def inverse_polar_transform(p: Tensor, spec: PolarGridSpec) -> Tensor:
    p = _check_input(p, spec.out_h, spec.out_w)
    return spatial_linear(p, _inverse_matrix(spec), (spec.input_h, spec.input_w))


def polar_transform_labels(mask: np.ndarray, spec: PolarGridSpec) -> np.ndarray:
    """Nearest-neighbour polar resampling of an integer label map."""
    mask = np.asarray(mask)
    if mask.shape[-2:] != (spec.input_h, spec.input_w):
        raise DimensionError(f"mask shape {mask.shape} does not match {spec}")
    grid = build_polar_grid(spec)
    r = np.floor(grid.u).astype(np.int64)
    c = np.floor(grid.v).astype(np.int64)
    inside = (r >= 0) & (r < spec.input_h) & (c >= 0) & (c < spec.input_w)
    out = np.zeros(mask.shape[:-2] + grid.shape, dtype=mask.dtype)
    out[..., inside] = mask[..., r[inside], c[inside]]
    return out


def inverse_polar_transform_labels(mask: np.ndarray, spec: PolarGridSpec) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape[-2:] != (spec.out_h, spec.out_w):
        raise DimensionError(f"polar mask shape {mask.shape} does not match {spec}")
    grid = build_inverse_grid(spec)
    r = np.clip(np.floor(grid.u).astype(np.int64), 0, spec.out_h - 1)
    c = np.mod(np.floor(grid.v).astype(np.int64), spec.out_w)
    out = np.zeros(mask.shape[:-2] + grid.shape, dtype=mask.dtype)
    out[..., grid.valid] = mask[..., r[grid.valid], c[grid.valid]]
    return out
