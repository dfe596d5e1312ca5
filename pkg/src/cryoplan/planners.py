"""Non-learned comparison planners behind one dispatch interface.

Three classical strategies plus a hook for a learned policy:

* random   — probe centres drawn uniformly from remaining tumour voxels,
             diameters drawn uniformly from the diameter grid.
* centre   — probes at the centroids of the connected tumour components,
             largest first (cycling), with the best grid diameter each.
* geometric— greedy maximum-marginal-coverage sphere packing with local
             coordinate-ascent refinement of each chosen centre.
* rl       — delegates to an attached policy object.

All planners emit nominal placements; intraoperative noise is the
environment's business.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .environment import EnvConfig, EnvState, ProbeAction, VisitAction, _sphere_ijk
from .volume import BinaryMask, GridMeta, voxel_to_world

__all__ = [
    "PlannerError", "GeometricSettings", "PlannerSpec",
    "plan_visit", "connected_components", "coverage_score", "default_diameter_grid",
]

PLANNER_KINDS = ("random", "centre", "geometric", "rl")


class PlannerError(RuntimeError):
    """Unknown planner kind, invalid settings or an unplannable state."""


@dataclass(frozen=True)
class GeometricSettings:
    """Knobs of the greedy sphere-cover planner.

    candidate_subsample keeps every k-th remaining tumour voxel (by flat
    index) as a candidate centre; healthy_penalty is the weight on newly
    frozen non-tumour gland voxels in the greedy objective.
    """

    candidate_subsample: float = 0.25
    refine_iters: int = 2
    refine_step: float = 1.0
    healthy_penalty: float = 0.0

    def __post_init__(self):
        if not (0 < self.candidate_subsample <= 1):
            raise PlannerError(
                f"candidate_subsample must be in (0, 1], got {self.candidate_subsample}"
            )
        if self.refine_iters < 0 or self.refine_step <= 0:
            raise PlannerError("refine_iters must be >= 0 and refine_step > 0")
        if self.healthy_penalty < 0:
            raise PlannerError("healthy_penalty must be >= 0")


@dataclass(frozen=True)
class PlannerSpec:
    """Which planner to run and with what settings.

    diameter_grid is shared by all kinds (random draws from it, centre and
    geometric search it); empty means five evenly spaced values across the
    environment's [d_min, d_max].
    """

    kind: str
    diameter_grid: tuple[float, ...] = ()
    geometric: GeometricSettings = field(default_factory=GeometricSettings)
    policy: object = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PLANNER_KINDS:
            raise PlannerError(f"unknown planner kind {self.kind!r}, expected one of {PLANNER_KINDS}")
        object.__setattr__(self, "diameter_grid", tuple(float(d) for d in self.diameter_grid))
        if any(d <= 0 for d in self.diameter_grid):
            raise PlannerError(f"diameter_grid values must be positive, got {self.diameter_grid}")


def default_diameter_grid(config: EnvConfig, n: int = 5) -> tuple[float, ...]:
    """Evenly spaced candidate diameters spanning the configured bounds."""
    return tuple(float(d) for d in np.linspace(config.d_min, config.d_max, n))


def _resolve_grid(spec: PlannerSpec, config: EnvConfig) -> tuple[float, ...]:
    grid = spec.diameter_grid or default_diameter_grid(config)
    for d in grid:
        if not (config.d_min <= d <= config.d_max):
            raise PlannerError(
                f"diameter_grid value {d} outside environment bounds [{config.d_min}, {config.d_max}]"
            )
    return grid


# ------------------------------------------------------------- primitives


def connected_components(mask: BinaryMask) -> list[np.ndarray]:
    """6-connected components as sorted flat-index arrays (x-fastest layout).

    Ordered by decreasing voxel count, ties by smallest member flat index.
    Empty mask gives an empty list.
    """
    labels, n = ndimage.label(mask.values, structure=ndimage.generate_binary_structure(3, 1))
    if n == 0:
        return []
    flat = labels.ravel(order="F")
    idx = np.flatnonzero(flat)
    labs = flat[idx]
    order = np.argsort(labs, kind="stable")
    counts = np.bincount(labs, minlength=n + 1)[1:]
    groups = np.split(idx[order], np.cumsum(counts)[:-1])
    groups.sort(key=lambda g: (-g.size, int(g[0])))
    return groups


def coverage_score(mask: BinaryMask, gland: BinaryMask, probe: ProbeAction,
                   healthy_penalty: float = 0.0,
                   already_covered: np.ndarray | None = None) -> float:
    """Greedy objective for one probe: new tumour minus weighted new healthy gland.

    mask is the scoring target (remaining tumour); healthy gland is gland
    minus target; voxels flagged in already_covered count for neither term.
    """
    ijk = _sphere_ijk(mask.meta, probe)
    tum = mask.values[ijk]
    new = ~already_covered[ijk] if already_covered is not None else np.ones(tum.shape, dtype=bool)
    t_new = int((tum & new).sum())
    if healthy_penalty == 0.0:
        return float(t_new)
    h_new = int((gland.values[ijk] & ~tum & new).sum())
    return float(t_new) - healthy_penalty * float(h_new)


def _component_centroid(meta: GridMeta, flat: np.ndarray) -> np.ndarray:
    ijk = np.unravel_index(flat, meta.dims, order="F")
    return voxel_to_world(meta, np.stack(ijk, axis=1).mean(axis=0))


# ------------------------------------------------------------- planners


def plan_visit(state: EnvState, spec: PlannerSpec, config: EnvConfig,
               rng: np.random.Generator) -> VisitAction:
    """Plan the nominal probes of one visit with the requested planner."""
    if state.remaining_count == 0:
        raise PlannerError(f"case {state.case.id}: no remaining tumour to plan against")
    if spec.kind == "rl":
        if spec.policy is None or not hasattr(spec.policy, "plan_visit"):
            raise PlannerError("planner kind 'rl' needs an attached policy with plan_visit()")
        return spec.policy.plan_visit(state, config)
    grid = _resolve_grid(spec, config)
    if spec.kind == "random":
        return _plan_random(state, grid, config, rng)
    if spec.kind == "centre":
        return _plan_centre(state, grid, config)
    return _plan_geometric(state, grid, spec.geometric, config)


def _remaining_flat(state: EnvState) -> np.ndarray:
    return np.flatnonzero(state.remaining_tumour.values.ravel(order="F"))


def _plan_random(state, grid, config, rng) -> VisitAction:
    meta = state.case.meta
    flat = _remaining_flat(state)
    probes = []
    for _ in range(config.probes_per_visit):
        pick = flat[int(rng.integers(flat.size))]
        ijk = np.unravel_index(pick, meta.dims, order="F")
        centre = voxel_to_world(meta, ijk)
        d = grid[int(rng.integers(len(grid)))]
        probes.append(ProbeAction(tuple(centre), d))
    return VisitAction(tuple(probes))


def _best_grid_diameter(state, centre, grid) -> float:
    """Smallest grid diameter maximizing the remaining-tumour count at centre."""
    best_d, best_n = grid[0], -1
    for d in grid:
        n = coverage_score(state.remaining_tumour, state.case.gland, ProbeAction(tuple(centre), d))
        if n > best_n:
            best_d, best_n = d, n
    return best_d


def _plan_centre(state, grid, config) -> VisitAction:
    comps = connected_components(state.remaining_tumour)
    meta = state.case.meta
    probes = []
    for c in range(config.probes_per_visit):
        centre = _component_centroid(meta, comps[c % len(comps)])
        probes.append(ProbeAction(tuple(centre), _best_grid_diameter(state, centre, grid)))
    return VisitAction(tuple(probes))


class _PaddedScorer:
    """Vectorized exact voxel counting for spheres centred on voxel centres.

    Target and healthy masks are zero-padded so that every sphere around an
    in-grid candidate stays in bounds; per-diameter voxel offsets are
    precomputed once.  Scores use integer voxel counts, so argmax tie-breaks
    are exact.
    """

    def __init__(self, meta: GridMeta, target: np.ndarray, healthy: np.ndarray,
                 grid: tuple[float, ...], healthy_penalty: float):
        self.meta = meta
        spacing = np.asarray(meta.spacing)
        pad = np.ceil(0.5 * max(grid) / spacing).astype(int) + 1
        self.pad = pad
        pdims = tuple(int(n + 2 * p) for n, p in zip(meta.dims, pad))
        self.pdims = pdims
        self.t = np.zeros(pdims, dtype=np.uint8)
        self.h = np.zeros(pdims, dtype=np.uint8)
        core = tuple(slice(p, p + n) for p, n in zip(pad, meta.dims))
        self.t[core] = target
        self.h[core] = healthy
        self.lam = healthy_penalty
        self.offsets = {}
        for d in grid:
            r = 0.5 * d
            reach = np.ceil(r / spacing).astype(int)
            axes = [np.arange(-re, re + 1) for re in reach]
            d2 = (
                ((axes[0] * spacing[0]) ** 2)[:, None, None]
                + ((axes[1] * spacing[1]) ** 2)[None, :, None]
                + ((axes[2] * spacing[2]) ** 2)[None, None, :]
            )
            oi, oj, ok = np.nonzero(d2 <= r * r)
            off = (
                (oi - reach[0]) * (pdims[1] * pdims[2])
                + (oj - reach[1]) * pdims[2]
                + (ok - reach[2])
            )
            self.offsets[d] = off

    def _base(self, flat_candidates: np.ndarray) -> np.ndarray:
        ijk = np.unravel_index(flat_candidates, self.meta.dims, order="F")
        return (
            (ijk[0] + self.pad[0]) * (self.pdims[1] * self.pdims[2])
            + (ijk[1] + self.pad[1]) * self.pdims[2]
            + (ijk[2] + self.pad[2])
        )

    def scores(self, flat_candidates: np.ndarray, d: float) -> np.ndarray:
        """Greedy objective for every candidate centre at diameter d."""
        gather = self._base(flat_candidates)[:, None] + self.offsets[d][None, :]
        s = self.t.ravel()[gather].sum(axis=1, dtype=np.int64).astype(np.float64)
        if self.lam:
            s -= self.lam * self.h.ravel()[gather].sum(axis=1, dtype=np.int64)
        return s

    def score_probe(self, probe: ProbeAction) -> float:
        """Exact objective at an arbitrary (off-lattice) centre."""
        ijk = _sphere_ijk(self.meta, probe)
        core = tuple(ix + p for ix, p in zip(ijk, self.pad))
        s = float(self.t[core].sum(dtype=np.int64))
        if self.lam:
            s -= self.lam * float(self.h[core].sum(dtype=np.int64))
        return s

    def cover(self, probe: ProbeAction) -> None:
        """Remove the probe's sphere from both scoring masks."""
        ijk = _sphere_ijk(self.meta, probe)
        core = tuple(ix + p for ix, p in zip(ijk, self.pad))
        self.t[core] = 0
        self.h[core] = 0

    def remaining_candidates(self) -> np.ndarray:
        core = tuple(slice(p, p + n) for p, n in zip(self.pad, self.meta.dims))
        return np.flatnonzero(self.t[core].ravel(order="F"))


def _subsample(flat: np.ndarray, fraction: float) -> np.ndarray:
    stride = max(1, int(round(1.0 / fraction)))
    return flat[::stride]


def _plan_geometric(state, grid, settings: GeometricSettings, config) -> VisitAction:
    meta = state.case.meta
    remaining = state.remaining_tumour.values
    healthy = state.case.gland.values & ~remaining
    scorer = _PaddedScorer(meta, remaining, healthy, grid, settings.healthy_penalty)
    start_candidates = _subsample(_remaining_flat(state), settings.candidate_subsample)

    probes = []
    for _ in range(config.probes_per_visit):
        cand = _subsample(scorer.remaining_candidates(), settings.candidate_subsample)
        if cand.size == 0:
            cand = start_candidates  # tumour fully covered mid-visit: park somewhere harmless
        best = None  # (score, flat_index, diameter)
        for d in grid:  # ascending d, candidates ascending by flat index
            s = scorer.scores(cand, d)
            k = int(np.argmax(s))
            if best is None or s[k] > best[0] or (s[k] == best[0] and cand[k] < best[1]):
                best = (float(s[k]), int(cand[k]), d)
        score, flat, d = best
        centre = voxel_to_world(meta, np.unravel_index(flat, meta.dims, order="F"))
        probe = ProbeAction(tuple(centre), d)

        for _ in range(settings.refine_iters):
            moved = False
            for axis in range(3):
                for sign in (1.0, -1.0):
                    c = list(probe.centre)
                    c[axis] += sign * settings.refine_step
                    trial = ProbeAction(tuple(c), d)
                    s = scorer.score_probe(trial)
                    if s > score:
                        probe, score, moved = trial, s, True
            if not moved:
                break

        probes.append(probe)
        scorer.cover(probe)

    return VisitAction(tuple(_greedy_order(meta, remaining, probes)))


def _greedy_order(meta, target: np.ndarray, probes: list) -> list:
    """Reorder a probe set by greedy marginal tumour coverage.

    Coverage is submodular, so emitting the fixed set in greedy order makes
    the per-probe marginals non-increasing; the covered union is unchanged.
    """
    spheres = [_sphere_ijk(meta, p) for p in probes]
    covered = np.zeros(meta.dims, dtype=bool)
    pool = list(range(len(probes)))
    out = []
    while pool:
        gains = [int((target[spheres[i]] & ~covered[spheres[i]]).sum()) for i in pool]
        pick = pool[int(np.argmax(gains))]  # argmax keeps construction order on ties
        out.append(probes[pick])
        covered[spheres[pick]] = True
        pool.remove(pick)
    return out
