"""Slice overlay rendering: anatomy in gray, masks as translucent tints.

Compositing is plain alpha blending per layer in a fixed order (gland,
tumour, ablation), then probe-centre markers for probes whose realized
sphere intersects the slice.  The written PNG encodes round(255 * rgb).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .environment import Plan, replay_probes
from .volume import Case, world_to_voxel

__all__ = ["RenderError", "OVERLAY_LAYERS", "MARKER_COLOR", "composite_slice",
           "render_plan_overlay", "overlay_filename"]


class RenderError(ValueError):
    """Bad axis/index or unpaintable inputs."""


# (name, rgb tint, alpha); order matters, later layers paint over earlier.
OVERLAY_LAYERS = (
    ("gland", (0.0, 1.0, 0.0), 0.25),
    ("tumour", (1.0, 0.0, 0.0), 0.45),
    ("ablation", (0.25, 0.4, 1.0), 0.45),
)
MARKER_COLOR = (1.0, 1.0, 0.2)
MARKER_HALF = 1  # 3x3 pixel probe-centre dots

AXIS_NAMES = {"x": 0, "y": 1, "z": 2, "0": 0, "1": 1, "2": 2}


def parse_axis(axis) -> int:
    if isinstance(axis, str):
        try:
            return AXIS_NAMES[axis.lower()]
        except KeyError:
            raise RenderError(f"unknown axis {axis!r}, expected x, y, z or 0..2") from None
    if axis in (0, 1, 2):
        return int(axis)
    raise RenderError(f"unknown axis {axis!r}, expected x, y, z or 0..2")


def composite_slice(image: np.ndarray, layers: dict[str, np.ndarray],
                    vmin: float, vmax: float) -> np.ndarray:
    """Blend a 2-D gray slice with the given boolean overlay slices; rgb in [0,1]."""
    span = vmax - vmin if vmax > vmin else 1.0
    gray = np.clip((image.astype(np.float64) - vmin) / span, 0.0, 1.0)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    for name, tint, alpha in OVERLAY_LAYERS:
        mask = layers.get(name)
        if mask is None or not mask.any():
            continue
        for ch in range(3):
            plane = rgb[:, :, ch]
            plane[mask] = (1.0 - alpha) * plane[mask] + alpha * tint[ch]
    return rgb


def overlay_filename(case_id: str, t: int, axis: int, index: int) -> str:
    return f"{case_id}_{t}_{'xyz'[axis]}{index}.png"


def render_plan_overlay(case: Case, plan: Plan, axis, index: int, out_path) -> Path:
    """Render one slice of the case with the plan's realized ablation overlaid.

    Pixel (row, col) maps to voxel indices along the two remaining axes in
    ascending axis order.  An empty plan renders pure anatomy.
    """
    axis = parse_axis(axis)
    meta = case.meta
    if not (0 <= index < meta.dims[axis]):
        raise RenderError(f"slice index {index} out of range for axis {'xyz'[axis]} "
                          f"with {meta.dims[axis]} voxels")

    realized = [list(v.probes) for v in plan.realized]
    if realized:
        ablated = replay_probes(case, realized).ablated.values
    else:
        ablated = np.zeros(meta.dims, dtype=bool)

    img = case.image.values
    rgb = composite_slice(
        img.take(index, axis=axis),
        {
            "gland": case.gland.values.take(index, axis=axis),
            "tumour": case.tumour.values.take(index, axis=axis),
            "ablation": ablated.take(index, axis=axis),
        },
        vmin=float(img.min()),
        vmax=float(img.max()),
    )

    plane_axes = [a for a in range(3) if a != axis]
    slice_world = meta.axis_coords(axis)[index]
    for visit in plan.realized:
        for probe in visit.probes:
            if abs(probe.centre[axis] - slice_world) > 0.5 * probe.diameter:
                continue
            vox = world_to_voxel(meta, probe.centre_array)
            r = int(round(vox[plane_axes[0]]))
            c = int(round(vox[plane_axes[1]]))
            r0, r1 = max(r - MARKER_HALF, 0), min(r + MARKER_HALF + 1, rgb.shape[0])
            c0, c1 = max(c - MARKER_HALF, 0), min(c + MARKER_HALF + 1, rgb.shape[1])
            if r1 > r0 and c1 > c0:
                rgb[r0:r1, c0:c1] = MARKER_COLOR

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(rgb * 255.0).clip(0, 255).astype(np.uint8)).save(out_path)
    return out_path
