"""Policy input: a coarse occupancy summary of the episode state.

Channels 0-2 partition the whole case grid exactly into coarse cells
(remainder voxels go to the last cell per axis) and carry per-cell occupancy
fractions of remaining tumour, ablated region and gland.  Channels 3-5
repeat those masks pooled over the action-frame window: cell (i, j, k) of a
frame channel covers the same region of space that the normalized action
coordinate ((i+.5)/g, ...) rescales to, so "occupancy here -> place a probe
here" is a fixed spatial correspondence rather than one the network must
re-derive per state.  The visit index enters as the scalar t/T.

The action frame is the world box around the remaining tumour padded by
d_max/2 per side and clamped to the case box: any probe centred outside it
cannot reach a remaining tumour voxel, so the policy's normalized outputs
rescale over this box rather than the whole case.  The frame follows the
remaining mask as ablation progresses, and every emitted centre still lies
inside the case bounding box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..environment import EnvState

__all__ = ["FeatureError", "FeatureTensor", "FEATURE_CHANNELS", "featurize"]

DEFAULT_GRID = (16, 16, 16)
FEATURE_CHANNELS = 6


class FeatureError(ValueError):
    """Coarse grid incompatible with the case grid."""


@dataclass
class FeatureTensor:
    """Occupancy channels (6, gx, gy, gz) in [0, 1] plus scalar visit progress."""

    channels: np.ndarray
    t_frac: float
    world_min: np.ndarray
    world_max: np.ndarray
    d_bounds: tuple[float, float]
    probes_per_visit: int


def _pool(mask: np.ndarray, grid: tuple[int, int, int], cell_counts: np.ndarray) -> np.ndarray:
    out = mask.astype(np.float64)
    for axis in range(3):
        base = mask.shape[axis] // grid[axis]
        starts = np.arange(grid[axis]) * base
        out = np.add.reduceat(out, starts, axis=axis)
    return out / cell_counts


def _pool_window(window: np.ndarray, grid: tuple[int, int, int]) -> np.ndarray:
    """Occupancy of an arbitrary voxel window resampled to the coarse grid.

    Axes at least as long as the grid use balanced partitions; shorter axes
    fall back to nearest-voxel sampling so the output never has holes.
    """
    out = window.astype(np.float64)
    counts = np.float64(1.0)
    for axis in range(3):
        w = out.shape[axis]
        g = grid[axis]
        if w >= g:
            bounds = (np.arange(g + 1) * w) // g
            out = np.add.reduceat(out, bounds[:-1], axis=axis)
            n = (bounds[1:] - bounds[:-1]).astype(np.float64)
        else:
            centres = ((2 * np.arange(g) + 1) * w) // (2 * g)
            out = np.take(out, centres, axis=axis)
            n = np.ones(g)
        shape = [1, 1, 1]
        shape[axis] = g
        counts = counts * n.reshape(shape)
    return out / counts


def featurize(state: EnvState, grid: tuple[int, int, int] = DEFAULT_GRID) -> FeatureTensor:
    """Deterministic coarse view of an episode state."""
    meta = state.case.meta
    grid = tuple(int(g) for g in grid)
    for axis in range(3):
        if grid[axis] < 1 or grid[axis] > meta.dims[axis]:
            raise FeatureError(
                f"coarse grid {grid} does not fit case dims {meta.dims} on axis {axis}"
            )
    sizes = []
    for axis in range(3):
        base = meta.dims[axis] // grid[axis]
        s = np.full(grid[axis], base, dtype=np.int64)
        s[-1] += meta.dims[axis] - base * grid[axis]
        sizes.append(s)
    cell_counts = (
        sizes[0][:, None, None] * sizes[1][None, :, None] * sizes[2][None, None, :]
    ).astype(np.float64)

    cfg = state.config
    world_min, world_max = _action_frame(state)
    window = _frame_window(meta, world_min, world_max)
    masks = (state.remaining_tumour.values, state.ablated.values,
             state.case.gland.values)
    channels = np.stack(
        [_pool(m, grid, cell_counts) for m in masks]
        + [_pool_window(m[window], grid) for m in masks]
    )
    return FeatureTensor(
        channels=channels,
        t_frac=state.t / cfg.visits,
        world_min=world_min,
        world_max=world_max,
        d_bounds=(cfg.d_min, cfg.d_max),
        probes_per_visit=cfg.probes_per_visit,
    )


def _frame_window(meta, world_min: np.ndarray, world_max: np.ndarray) -> tuple[slice, ...]:
    """Index slices of the voxels whose centres lie inside the action frame."""
    origin = np.asarray(meta.origin)
    spacing = np.asarray(meta.spacing)
    lo = np.ceil((np.asarray(world_min) - origin) / spacing - 1e-9).astype(int)
    hi = np.floor((np.asarray(world_max) - origin) / spacing + 1e-9).astype(int)
    dims = np.asarray(meta.dims)
    lo = np.clip(lo, 0, dims - 1)
    hi = np.clip(hi, 0, dims - 1)
    hi = np.maximum(hi, lo)
    return tuple(slice(int(a), int(b) + 1) for a, b in zip(lo, hi))


def _action_frame(state: EnvState) -> tuple[np.ndarray, np.ndarray]:
    """Padded world box around the remaining tumour, clamped to the case box.

    Falls back to the whole case box when nothing remains (a finished state
    can still be featurized for value estimates).
    """
    meta = state.case.meta
    idx = np.argwhere(state.remaining_tumour.values)
    if idx.size == 0:
        return meta.world_min, meta.world_max
    origin = np.asarray(meta.origin)
    spacing = np.asarray(meta.spacing)
    pad = 0.5 * state.config.d_max
    lo = origin + idx.min(axis=0) * spacing - pad
    hi = origin + idx.max(axis=0) * spacing + pad
    return np.maximum(lo, meta.world_min), np.minimum(hi, meta.world_max)
