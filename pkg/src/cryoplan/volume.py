"""Voxel-grid data model, synthetic phantom generation and case file I/O.

Everything downstream (environment, planners, evaluation, service) works on
the types defined here.  A Case bundles one grey-value image with a tumour
mask and a gland mask on a shared grid.  World coordinates are millimetres;
the centre of voxel (i, j, k) sits at ``origin + (i, j, k) * spacing``.
"""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FORMAT_LINE = "cryoplan-case v1"
VOLUMES_LINE = "volumes image:f32 tumour:u8 gland:u8"


class VolumeError(ValueError):
    """Raised for invalid grids, malformed case files or infeasible phantom configs."""


# ---------------------------------------------------------------- grid types


@dataclass(frozen=True)
class GridMeta:
    """Geometry of a dense voxel grid: dims (voxels), spacing and origin (mm)."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(n) < 1 for n in self.dims):
            raise VolumeError(f"dims must be 3 integers >= 1, got {self.dims}")
        if len(self.spacing) != 3 or any(not (s > 0) for s in self.spacing):
            raise VolumeError(f"spacing must be 3 positive reals, got {self.spacing}")
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    @property
    def world_min(self) -> np.ndarray:
        """Lower corner of the physical box (outer voxel edges), mm."""
        return np.asarray(self.origin) - 0.5 * np.asarray(self.spacing)

    @property
    def world_max(self) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(self.dims) - 0.5) * np.asarray(self.spacing)

    def axis_coords(self, axis: int) -> np.ndarray:
        """World coordinates of voxel centres along one axis."""
        return self.origin[axis] + np.arange(self.dims[axis]) * self.spacing[axis]

    def linear_index(self, i, j, k):
        """Flat index with x fastest: i + nx * (j + ny * k).  Matches the file layout."""
        nx, ny, _ = self.dims
        return np.asarray(i) + nx * (np.asarray(j) + ny * np.asarray(k))


def world_to_voxel(meta: GridMeta, p) -> np.ndarray:
    """Map world mm to fractional voxel coordinates.  No clamping."""
    return (np.asarray(p, dtype=np.float64) - np.asarray(meta.origin)) / np.asarray(meta.spacing)


def voxel_to_world(meta: GridMeta, v) -> np.ndarray:
    """Map (fractional) voxel coordinates to world mm.  Inverse of world_to_voxel."""
    return np.asarray(meta.origin) + np.asarray(v, dtype=np.float64) * np.asarray(meta.spacing)


@dataclass
class ScalarVolume:
    """Dense real-valued volume.  values has shape dims, indexed [i, j, k]."""

    meta: GridMeta
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != self.meta.dims:
            raise VolumeError(
                f"volume shape {self.values.shape} does not match dims {self.meta.dims}"
            )
        if not np.all(np.isfinite(self.values)):
            raise VolumeError("volume contains non-finite values")

    def copy(self) -> "ScalarVolume":
        return ScalarVolume(self.meta, self.values.copy())


@dataclass
class BinaryMask:
    """Dense boolean mask on the same grid convention as ScalarVolume."""

    meta: GridMeta
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values).astype(bool)
        if self.values.shape != self.meta.dims:
            raise VolumeError(
                f"mask shape {self.values.shape} does not match dims {self.meta.dims}"
            )

    @property
    def count(self) -> int:
        return int(self.values.sum())

    def copy(self) -> "BinaryMask":
        return BinaryMask(self.meta, self.values.copy())


@dataclass
class Case:
    """One planning case: image plus tumour and gland masks on a shared grid."""

    id: str
    image: ScalarVolume
    tumour: BinaryMask
    gland: BinaryMask

    def __post_init__(self):
        if not (self.image.meta == self.tumour.meta == self.gland.meta):
            raise VolumeError(f"case {self.id}: image/tumour/gland grids differ")
        if self.tumour.count == 0:
            raise VolumeError(f"case {self.id}: tumour mask is empty")
        if np.any(self.tumour.values & ~self.gland.values):
            raise VolumeError(f"case {self.id}: tumour extends outside the gland")

    @property
    def meta(self) -> GridMeta:
        return self.image.meta


def gland_mean_intensity(case: Case) -> float:
    """Arithmetic mean of image values over gland voxels."""
    sel = case.gland.values
    if not sel.any():
        raise VolumeError(f"case {case.id}: gland mask is empty")
    return float(np.mean(case.image.values[sel], dtype=np.float64))


# ---------------------------------------------------------------- phantoms


@dataclass(frozen=True)
class PhantomConfig:
    """Parameters of the synthetic prostate phantom generator.

    The gland is an axis-aligned ellipsoid centred in the grid.  The tumour is
    a union of 1..N ellipsoidal blobs (spheres when the aspect range is
    degenerate at 1) placed fully inside the gland with a minimum mutual
    separation.  Intensities are flat levels plus bounded uniform texture.
    """

    dims: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    gland_semi_axes_lo: tuple[float, float, float] = (21.0, 18.0, 18.0)
    gland_semi_axes_hi: tuple[float, float, float] = (26.0, 22.0, 22.0)
    blob_count: tuple[int, int] = (3, 5)
    blob_radius: tuple[float, float] = (5.0, 7.5)
    blob_aspect: tuple[float, float] = (0.85, 1.2)
    blob_separation_mm: float = 2.0
    tumour_fraction: tuple[float, float] = (0.01, 0.5)
    background_level: float = 0.12
    gland_level: float = 0.45
    tumour_level: float = 0.85
    noise_amplitude: float = 0.04
    seed: int = 0

    def validate(self) -> None:
        if any(n < 1 for n in self.dims):
            raise VolumeError("phantom dims must be positive")
        if any(s <= 0 for s in self.spacing):
            raise VolumeError("phantom spacing must be positive")
        for name, (lo, hi) in (
            ("blob_count", self.blob_count),
            ("blob_radius", self.blob_radius),
            ("blob_aspect", self.blob_aspect),
            ("tumour_fraction", self.tumour_fraction),
        ):
            if lo > hi or lo <= 0:
                raise VolumeError(f"phantom {name} range ({lo}, {hi}) is empty or non-positive")
        for lo, hi in zip(self.gland_semi_axes_lo, self.gland_semi_axes_hi):
            if lo > hi or lo <= 0:
                raise VolumeError("phantom gland semi-axes range is empty or non-positive")
        # Largest blob must fit inside the smallest gland along every axis.
        max_blob_semi = self.blob_radius[1] * self.blob_aspect[1]
        min_gland_semi = min(self.gland_semi_axes_lo)
        if max_blob_semi >= min_gland_semi:
            raise VolumeError(
                "phantom infeasible: max tumour blob semi-axis "
                f"{max_blob_semi:.1f} mm does not fit inside min gland semi-axis "
                f"{min_gland_semi:.1f} mm"
            )
        half_extent = [0.5 * n * s for n, s in zip(self.dims, self.spacing)]
        for ax, semi in enumerate(self.gland_semi_axes_hi):
            if semi >= half_extent[ax]:
                raise VolumeError(
                    f"phantom infeasible: gland semi-axis {semi:.1f} mm exceeds half "
                    f"the grid extent {half_extent[ax]:.1f} mm on axis {ax}"
                )


def _ellipsoid_mask(meta: GridMeta, centre, semi_axes) -> np.ndarray:
    """Boolean mask of voxel centres inside an axis-aligned ellipsoid."""
    cx, cy, cz = centre
    ax, ay, az = semi_axes
    gx = (meta.axis_coords(0) - cx) / ax
    gy = (meta.axis_coords(1) - cy) / ay
    gz = (meta.axis_coords(2) - cz) / az
    q = (
        gx[:, None, None] ** 2
        + gy[None, :, None] ** 2
        + gz[None, None, :] ** 2
    )
    return q <= 1.0


def generate_phantom(config: PhantomConfig, index: int) -> Case:
    """Build one deterministic synthetic case for (config.seed, index)."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(int(index),)))
    meta = GridMeta(config.dims, config.spacing)

    grid_centre = voxel_to_world(meta, (np.asarray(meta.dims) - 1) / 2.0)
    gland_semi = rng.uniform(config.gland_semi_axes_lo, config.gland_semi_axes_hi)
    gland = _ellipsoid_mask(meta, grid_centre, gland_semi)
    gland_count = int(gland.sum())

    n_blobs = int(rng.integers(config.blob_count[0], config.blob_count[1] + 1))
    frac_lo, frac_hi = config.tumour_fraction

    # Placement can be tight for large blob draws; fall back to fewer blobs
    # deterministically rather than fail the whole case.
    tumour = None
    for n in range(n_blobs, 0, -1):
        for attempt in range(60):
            blobs = _sample_blobs(rng, config, grid_centre, gland_semi, n)
            if blobs is None:
                continue
            candidate = np.zeros(meta.dims, dtype=bool)
            for centre, semi in blobs:
                candidate |= _ellipsoid_mask(meta, centre, semi)
            if np.any(candidate & ~gland):
                continue  # rasterized blob leaked through the gland surface
            frac = candidate.sum() / gland_count
            if frac_lo <= frac <= frac_hi:
                tumour = candidate
                break
        if tumour is not None:
            break
    if tumour is None:
        raise VolumeError(
            f"phantom (seed={config.seed}, index={index}): could not place any "
            f"blobs inside the gland with tumour fraction in [{frac_lo}, {frac_hi}]"
        )

    image = np.full(meta.dims, config.background_level, dtype=np.float64)
    image[gland] = config.gland_level
    image[tumour] = config.tumour_level
    image += rng.uniform(-config.noise_amplitude, config.noise_amplitude, size=meta.dims)

    case = Case(
        id=f"phantom-{index:04d}",
        image=ScalarVolume(meta, image.astype(np.float32)),
        tumour=BinaryMask(meta, tumour),
        gland=BinaryMask(meta, gland),
    )
    log.debug(
        "generated %s: gland %d vox, tumour %d vox in %d blobs",
        case.id, gland_count, case.tumour.count, n_blobs,
    )
    return case


def _sample_blobs(rng, config, gland_centre, gland_semi, n_blobs):
    """Sample blob (centre, semi_axes) tuples, or None when placement fails.

    Shapes are drawn up front and placed largest first: big blobs need the
    most room, so seating them while the gland is empty makes tight draws
    far more likely to fit.
    """
    shapes = []
    for _ in range(n_blobs):
        r = rng.uniform(*config.blob_radius)
        shapes.append(r * rng.uniform(config.blob_aspect[0], config.blob_aspect[1], size=3))
    shapes.sort(key=lambda s: -s.max())

    placed = []
    for semi in shapes:
        # Keep the blob's bounding sphere inside the gland: conservative
        # per-axis shrink by the largest semi-axis.
        room = gland_semi - semi.max()
        if np.any(room <= 0):
            return None
        ok = False
        for _ in range(300):
            u = rng.uniform(-1.0, 1.0, size=3)
            if (u ** 2).sum() > 1.0:
                continue  # rejection sample inside the unit ball
            centre = gland_centre + u * room
            min_gap = config.blob_separation_mm
            if any(
                np.linalg.norm(centre - c2) < semi.max() + s2.max() + min_gap
                for c2, s2 in placed
            ):
                continue
            placed.append((centre, semi))
            ok = True
            break
        if not ok:
            return None
    return placed


# ---------------------------------------------------------------- file I/O


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_case(case: Case, path) -> None:
    """Serialize a case to the .cvol container (text header + raw payload).

    The case id is carried by the filename stem, not the header.
    """
    meta = case.meta
    header = "\n".join(
        [
            FORMAT_LINE,
            "dims {} {} {}".format(*meta.dims),
            "spacing {} {} {}".format(*(repr(s) for s in meta.spacing)),
            "origin {} {} {}".format(*(repr(o) for o in meta.origin)),
            VOLUMES_LINE,
            "",
            "",
        ]
    )
    payload = b"".join(
        [
            np.asfortranarray(case.image.values.astype("<f4")).tobytes(order="F"),
            np.asfortranarray(case.tumour.values.astype("<u1")).tobytes(order="F"),
            np.asfortranarray(case.gland.values.astype("<u1")).tobytes(order="F"),
        ]
    )
    _atomic_write_bytes(Path(path), header.encode("utf-8") + payload)


def load_case(path) -> Case:
    """Parse a .cvol container.  The id is the filename stem."""
    path = Path(path)
    raw = path.read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise VolumeError(f"{path}: missing blank line after header")
    lines = raw[:sep].decode("utf-8").split("\n")
    payload = raw[sep + 2:]

    if len(lines) != 5:
        raise VolumeError(f"{path}: malformed header, expected 5 lines, got {len(lines)}")
    if lines[0] != FORMAT_LINE:
        if lines[0].startswith("cryoplan-case"):
            raise VolumeError(f"{path}: unknown format version {lines[0]!r}")
        raise VolumeError(f"{path}: not a cryoplan case file (first line {lines[0]!r})")

    def fields(line: str, key: str, n: int, cast):
        parts = line.split()
        if len(parts) != n + 1 or parts[0] != key:
            raise VolumeError(f"{path}: malformed header line {line!r}, expected '{key}' + {n} values")
        try:
            return tuple(cast(p) for p in parts[1:])
        except ValueError as exc:
            raise VolumeError(f"{path}: bad {key} values in {line!r}") from exc

    dims = fields(lines[1], "dims", 3, int)
    spacing = fields(lines[2], "spacing", 3, float)
    origin = fields(lines[3], "origin", 3, float)
    if lines[4] != VOLUMES_LINE:
        raise VolumeError(f"{path}: unsupported volume list {lines[4]!r}")

    meta = GridMeta(dims, spacing, origin)
    n = meta.voxel_count
    expect = 4 * n + n + n
    if len(payload) != expect:
        section = "image"
        if len(payload) > 4 * n:
            section = "tumour" if len(payload) <= 5 * n else "gland"
        raise VolumeError(
            f"{path}: payload has {len(payload)} bytes, expected {expect} for dims "
            f"{dims} (short or long in the {section} section)"
        )

    def vol(buf, dtype):
        return np.frombuffer(buf, dtype=dtype).reshape(dims, order="F")

    image = vol(payload[: 4 * n], "<f4")
    tumour = vol(payload[4 * n: 5 * n], "<u1")
    gland = vol(payload[5 * n:], "<u1")
    if not (np.isin(tumour, (0, 1)).all() and np.isin(gland, (0, 1)).all()):
        raise VolumeError(f"{path}: mask payload contains bytes other than 0/1")

    return Case(
        id=path.stem,
        image=ScalarVolume(meta, image.copy()),
        tumour=BinaryMask(meta, tumour.astype(bool)),
        gland=BinaryMask(meta, gland.astype(bool)),
    )
