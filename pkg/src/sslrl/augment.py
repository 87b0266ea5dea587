"""Image augmentations parameterized by a single magnitude ``m``.

All functions operate on uint8 batches laid out as ``(N, H, W, C)`` and never
rescale pixel values; conversion to [0, 1] happens once, right before the
encoder.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

AugKind = Literal["random_crop", "random_translate", "center_crop", "none"]


class AugmentationError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentationSpec:
    kind: AugKind = "random_crop"
    m: int = 100
    out: int = 84

    def __post_init__(self):
        if self.kind not in ("random_crop", "random_translate", "center_crop", "none"):
            raise AugmentationError(f"unknown augmentation kind {self.kind!r}")
        if self.kind in ("random_crop", "random_translate", "center_crop") and self.m < self.out:
            raise AugmentationError(f"{self.kind} needs m >= out, got m={self.m}, out={self.out}")


def _check_batch(batch: np.ndarray) -> None:
    if batch.ndim != 4:
        raise AugmentationError(f"expected (N, H, W, C) batch, got shape {batch.shape}")
    if batch.shape[1] != batch.shape[2]:
        raise AugmentationError(f"images must be square, got {batch.shape[1:3]}")


def center_crop(batch: np.ndarray, size: int) -> np.ndarray:
    """Center ``size x size`` window; zero-pads symmetrically when the image is smaller."""
    _check_batch(batch)
    h = batch.shape[1]
    if size == h:
        return batch
    if size < h:
        top = (h - size) // 2
        return batch[:, top:top + size, top:top + size]
    pad = size - h
    before = pad // 2
    widths = ((0, 0), (before, pad - before), (before, pad - before), (0, 0))
    return np.pad(batch, widths, mode="constant")


def random_crop(batch: np.ndarray, out: int, rng: np.random.Generator) -> np.ndarray:
    """Crop an ``out x out`` window at an independent uniform offset per image."""
    _check_batch(batch)
    n, m = batch.shape[0], batch.shape[1]
    if m < out:
        raise AugmentationError(f"random_crop source size {m} smaller than output {out}")
    offsets = rng.integers(0, m - out + 1, size=(n, 2))
    if m == out:
        return batch.copy()
    windows = sliding_window_view(batch, (out, out), axis=(1, 2))
    # windows: (N, m-out+1, m-out+1, C, out, out)
    crops = windows[np.arange(n), offsets[:, 0], offsets[:, 1]]
    return np.ascontiguousarray(crops.transpose(0, 2, 3, 1))


def random_translate(batch: np.ndarray, m: int, out: int, rng: np.random.Generator) -> np.ndarray:
    """Paste each image at a random offset on a zero ``m x m`` canvas, then take the center ``out`` crop."""
    _check_batch(batch)
    n, h = batch.shape[0], batch.shape[1]
    if h > m:
        raise AugmentationError(f"random_translate image size {h} exceeds canvas {m}")
    if out > m:
        raise AugmentationError(f"random_translate output {out} exceeds canvas {m}")
    offsets = rng.integers(0, m - h + 1, size=(n, 2))
    canvas = np.zeros((n, m, m, batch.shape[3]), dtype=batch.dtype)
    for i, (dy, dx) in enumerate(offsets):
        canvas[i, dy:dy + h, dx:dx + h] = batch[i]
    return center_crop(canvas, out)


def augment(batch: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    """Apply ``spec`` to a batch of source renders.

    ``random_crop`` first brings the source to ``m x m`` (center crop, or zero
    padding when ``m`` exceeds the render) and then crops ``out`` at random.
    ``random_translate`` starts from the center ``out`` view.
    """
    if spec.kind == "random_crop":
        return random_crop(center_crop(batch, spec.m), spec.out, rng)
    if spec.kind == "random_translate":
        return random_translate(center_crop(batch, spec.out), spec.m, spec.out, rng)
    if spec.kind == "center_crop":
        return np.ascontiguousarray(center_crop(center_crop(batch, spec.m), spec.out))
    _check_batch(batch)
    if batch.shape[1] != spec.out:
        raise AugmentationError(f"'none' expects {spec.out}px inputs, got {batch.shape[1]}px")
    return batch


def make_branch_views(s, s_next, spec1: AugmentationSpec, spec2: AugmentationSpec,
                      rng: np.random.Generator):
    """Four independently augmented views ``(s_a, s_a', s_p, s_p')``.

    ``spec1`` drives the RL/online branch and ``spec2`` the SSL/momentum branch.
    """
    s_a = augment(s, spec1, rng)
    s_a_next = augment(s_next, spec1, rng)
    s_p = augment(s, spec2, rng)
    s_p_next = augment(s_next, spec2, rng)
    return s_a, s_a_next, s_p, s_p_next
