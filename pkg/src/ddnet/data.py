"""Synthetic fundus-like samples, augmentation, OD-window cropping and netpbm I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import ContractError, DataError

BACKGROUND, RIM, CUP = 0, 1, 2
MASK_LEVELS = np.array([0, 127, 255], dtype=np.uint8)


@dataclass(frozen=True)
class SynthParams:
    size: int = 128
    disc_radius: tuple[float, float] = (0.25, 0.35)
    cup_ratio: tuple[float, float] = (0.3, 0.8)
    eccentricity: float = 0.10
    center_jitter: float = 0.05
    vessels: tuple[int, int] = (4, 8)
    noise: float = 0.02
    seed: int = 0


@dataclass
class Sample:
    image: np.ndarray          # [3,H,W] float64 in [0,1]
    mask: np.ndarray           # [H,W] uint8 labels
    true_cdr: float
    seed: int = 0
    name: str = ""


def disc_region(mask: np.ndarray) -> np.ndarray:
    return mask >= RIM


def cup_region(mask: np.ndarray) -> np.ndarray:
    return mask == CUP


def _ellipse(shape, center, ry, rx) -> np.ndarray:
    yy, xx = np.mgrid[:shape[0], :shape[1]] + 0.5
    return ((yy - center[0]) / ry) ** 2 + ((xx - center[1]) / rx) ** 2


_MAX_TRIES = 32


def _geometry(p: SynthParams, rng: np.random.Generator):
    for _ in range(_MAX_TRIES):
        n = p.size
        r = rng.uniform(*p.disc_radius) * n
        e_disc = rng.uniform(-p.eccentricity, p.eccentricity)
        disc_ry, disc_rx = r * (1 + e_disc), r * (1 - e_disc)
        cdr = rng.uniform(*p.cup_ratio)
        e_cup = rng.uniform(-p.eccentricity, p.eccentricity)
        cup_ry = cdr * disc_ry
        cup_rx = cdr * disc_rx * (1 + e_cup)
        center = n / 2 + rng.uniform(-p.center_jitter, p.center_jitter, size=2) * n
        # cup may drift off-centre but must keep a rim of at least 2 px
        slack_y = disc_ry - cup_ry - 2.0
        slack_x = disc_rx - cup_rx - 2.0
        if slack_y <= 0 or slack_x <= 0:
            continue
        offset = rng.uniform(-0.3, 0.3, size=2) * np.array([slack_y, slack_x])
        cup_center = center + offset
        inside = (center[0] - disc_ry >= 1 and center[0] + disc_ry <= n - 1
                  and center[1] - disc_rx >= 1 and center[1] + disc_rx <= n - 1)
        if not inside:
            continue
        return center, (disc_ry, disc_rx), cup_center, (cup_ry, cup_rx), cup_ry / disc_ry
    raise DataError(f"no feasible disc/cup geometry after {_MAX_TRIES} draws")


def _render(p: SynthParams, rng: np.random.Generator, center, disc_axes, cup_center,
            cup_axes) -> tuple[np.ndarray, np.ndarray]:
    n = p.size
    yy, xx = np.mgrid[:n, :n] + 0.5
    disc_q = _ellipse((n, n), center, *disc_axes)
    cup_q = _ellipse((n, n), cup_center, *cup_axes)
    mask = np.zeros((n, n), dtype=np.uint8)
    mask[disc_q <= 1.0] = RIM
    mask[cup_q <= 1.0] = CUP

    # reddish fundus background with a smooth illumination gradient
    ang = rng.uniform(0, 2 * np.pi)
    ramp = ((yy - n / 2) * np.sin(ang) + (xx - n / 2) * np.cos(ang)) / n
    base = 0.5 + 0.25 * ramp
    img = np.stack([0.75 * base + 0.15, 0.35 * base + 0.05, 0.15 * base + 0.02])

    # soft-edged disc and cup (edge width ~1.5 px)
    disc_soft = 1.0 / (1.0 + np.exp((np.sqrt(disc_q) - 1.0) * min(disc_axes) / 1.5))
    cup_soft = 1.0 / (1.0 + np.exp((np.sqrt(cup_q) - 1.0) * min(cup_axes) / 1.5))
    img += np.array([0.15, 0.25, 0.12])[:, None, None] * disc_soft
    img += np.array([0.08, 0.18, 0.15])[:, None, None] * cup_soft

    # dark vessels radiating from the disc
    vessel = np.zeros((n, n))
    for _ in range(rng.integers(p.vessels[0], p.vessels[1] + 1)):
        theta = rng.uniform(0, 2 * np.pi)
        bend = rng.uniform(-1.5, 1.5)
        width = rng.uniform(0.8, 1.8)
        t = np.linspace(0.2, 1.6, 200) * n / 2
        th = theta + bend * (t / n) ** 2
        py = center[0] + t * np.sin(th)
        px = center[1] + t * np.cos(th)
        d2 = np.full((n, n), np.inf)
        for cy, cx in zip(py[::4], px[::4]):
            d2 = np.minimum(d2, (yy - cy) ** 2 + (xx - cx) ** 2)
        vessel = np.maximum(vessel, np.exp(-d2 / (2 * width ** 2)))
    img *= 1.0 - 0.35 * vessel[None]

    img += rng.normal(0.0, p.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0), mask


def generate_one(params: SynthParams, seed: int) -> Sample:
    rng = np.random.default_rng(seed)
    center, disc_axes, cup_center, cup_axes, cdr = _geometry(params, rng)
    image, mask = _render(params, rng, center, disc_axes, cup_center, cup_axes)
    return Sample(image, mask, float(cdr), seed, f"synth_{seed:06d}")


def generate(params: SynthParams, count: int) -> list[Sample]:
    """``count`` samples with per-sample seeds ``params.seed + i``."""
    if count < 1:
        raise ContractError("count must be >= 1")
    return [generate_one(params, params.seed + i) for i in range(count)]


# -- augmentation ---------------------------------------------------------------------

def scale_about_center(sample: Sample, factor: float) -> Sample:
    n_h, n_w = sample.mask.shape
    yy, xx = np.mgrid[:n_h, :n_w] + 0.5
    src_y = (yy - n_h / 2) / factor + n_h / 2 - 0.5
    src_x = (xx - n_w / 2) / factor + n_w / 2 - 0.5
    coords = np.stack([src_y, src_x])
    image = np.stack([ndimage.map_coordinates(ch, coords, order=1, mode="nearest")
                      for ch in sample.image])
    # nearest neighbour: round half up so the map is a pure pixel selection
    ri = np.clip(np.floor(src_y + 0.5).astype(int), 0, n_h - 1)
    ci = np.clip(np.floor(src_x + 0.5).astype(int), 0, n_w - 1)
    outside = (src_y < -0.5) | (src_y > n_h - 0.5) | (src_x < -0.5) | (src_x > n_w - 0.5)
    mask = sample.mask[ri, ci]
    mask[outside] = BACKGROUND
    return replace(sample, image=image, mask=mask)


def hflip(sample: Sample) -> Sample:
    return replace(sample, image=sample.image[:, :, ::-1].copy(),
                   mask=sample.mask[:, ::-1].copy())


def augment(sample: Sample, rng: np.random.Generator, flip_prob: float = 0.5,
            scale_range: tuple[float, float] = (0.9, 1.1)) -> Sample:
    if rng.random() < flip_prob:
        sample = hflip(sample)
    factor = rng.uniform(*scale_range)
    return scale_about_center(sample, factor)


# -- OD window -----------------------------------------------------------------------

def region_centroid(region: np.ndarray) -> tuple[float, float]:
    rows, cols = np.nonzero(region)
    if rows.size == 0:
        raise DataError("empty region has no centroid")
    return float(rows.mean()), float(cols.mean())


def crop_od_window(sample: Sample, window: int) -> Sample:
    h, w = sample.mask.shape
    if window > min(h, w):
        raise ContractError(f"window {window} larger than image {h}x{w}")
    cy, cx = region_centroid(disc_region(sample.mask))
    top = int(np.clip(np.round(cy - (window - 1) / 2), 0, h - window))
    left = int(np.clip(np.round(cx - (window - 1) / 2), 0, w - window))
    return replace(sample,
                   image=sample.image[:, top:top + window, left:left + window].copy(),
                   mask=sample.mask[top:top + window, left:left + window].copy())


# -- netpbm I/O ----------------------------------------------------------------------

def _read_header(buf: bytes, magic: bytes, path) -> tuple[int, int, int, int]:
    """Parse a binary netpbm header; returns (width, height, maxval, payload offset)."""
    if buf[:2] != magic:
        raise DataError(f"{path}: expected magic {magic.decode()} at byte 0")
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: malformed header at byte {pos}")
        tokens.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise DataError(f"{path}: malformed header at byte {pos}")
    width, height, maxval = tokens
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit maxval 255 supported (byte {start})")
    return width, height, maxval, pos + 1


def save_ppm(path, image: np.ndarray) -> None:
    """Write a [3,H,W] image in [0,1] as binary P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"expected [3,H,W] image, got {image.shape}")
    q = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    _, h, w = q.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + q.transpose(1, 2, 0).tobytes())


def load_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    w, h, _, off = _read_header(buf, b"P6", path)
    need = w * h * 3
    if len(buf) - off != need:
        raise DataError(f"{path}: payload at byte {off} has {len(buf) - off} bytes, need {need}")
    arr = np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def save_pgm(path, gray: np.ndarray) -> None:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + gray.tobytes())


def load_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    w, h, _, off = _read_header(buf, b"P5", path)
    if len(buf) - off != w * h:
        raise DataError(f"{path}: payload at byte {off} has {len(buf) - off} bytes, need {w * h}")
    return np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(h, w).copy()


def save_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.size and (mask.min() < 0 or mask.max() > CUP):
        raise DataError("mask labels must be in {0,1,2}")
    save_pgm(path, MASK_LEVELS[mask.astype(np.intp)])


def load_mask(path) -> np.ndarray:
    gray = load_pgm(path)
    labels = np.full(gray.shape, 255, dtype=np.uint8)
    for cls, level in enumerate(MASK_LEVELS):
        labels[gray == level] = cls
    bad = np.flatnonzero(labels == 255)
    if bad.size:
        header = len(Path(path).read_bytes()) - gray.size
        raise DataError(f"{path}: mask value {gray.reshape(-1)[bad[0]]} not in {{0,127,255}} "
                        f"at byte {header + bad[0]}")
    return labels


def grayscale_image(image: np.ndarray) -> np.ndarray:
    return np.asarray(image).mean(axis=0)


# -- datasets on disk ----------------------------------------------------------------

MANIFEST = "manifest.csv"


def write_dataset(out_dir, samples: Iterable[Sample]) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for s in samples:
        save_ppm(out / "images" / f"{s.name}.ppm", s.image)
        save_mask(out / "masks" / f"{s.name}.pgm", s.mask)
        rows.append((s.name, s.seed, f"{s.true_cdr:.10f}"))
    with open(out / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "seed", "true_cdr"])
        writer.writerows(rows)
    return out


def read_manifest(data_dir) -> list[dict]:
    path = Path(data_dir) / MANIFEST
    if not path.exists():
        raise DataError(f"{path}: manifest not found")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for i, row in enumerate(rows, 2):
        if not {"filename", "seed", "true_cdr"} <= set(row):
            raise DataError(f"{path}: line {i} missing columns")
    return rows


def load_dataset(data_dir, limit: Optional[int] = None) -> list[Sample]:
    root = Path(data_dir)
    rows = read_manifest(root)
    if limit is not None:
        rows = rows[:limit]
    if not rows:
        raise DataError(f"{root}: empty dataset")
    return [Sample(load_ppm(root / "images" / f"{r['filename']}.ppm"),
                   load_mask(root / "masks" / f"{r['filename']}.pgm"),
                   float(r["true_cdr"]), int(r["seed"]), r["filename"]) for r in rows]


def stack_batch(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([s.image for s in samples]), np.stack([s.mask for s in samples]))
