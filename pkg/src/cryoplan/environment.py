"""The cryoablation planning environment.

A case is treated over up to T visits.  Each visit places C probes; every
probe freezes a sphere of chosen diameter around its centre.  Placement is
perturbed by truncated Gaussian noise to model intraoperative variability.
The visit reward is the number of remaining tumour voxels falling inside the
union of this visit's realized spheres, optionally reduced by a penalty on
near-repeated placements.  Transitions erase frozen voxels from the tumour
mask and flatten the image there to the gland mean intensity.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .volume import BinaryMask, Case, GridMeta, _atomic_write_bytes, gland_mean_intensity

__all__ = [
    "ProbeAction", "VisitAction", "NoiseModel", "RewardShaping", "EnvConfig",
    "EnvState", "StepResult", "Plan", "EnvError",
    "reset", "apply_noise", "sphere_voxels", "reward", "step",
    "truncated_normal", "replay_probes", "write_traj", "read_traj",
]


class EnvError(RuntimeError):
    """Invalid action, exhausted episode or malformed trajectory file."""


# ---------------------------------------------------------------- actions


@dataclass(frozen=True)
class ProbeAction:
    """One cryoprobe placement: ice-sphere centre (world mm) and diameter (mm)."""

    centre: tuple[float, float, float]
    diameter: float

    def __post_init__(self):
        centre = tuple(float(c) for c in self.centre)
        if len(centre) != 3 or not all(np.isfinite(centre)):
            raise EnvError(f"probe centre must be 3 finite reals, got {self.centre}")
        if not np.isfinite(self.diameter) or self.diameter <= 0:
            raise EnvError(f"probe diameter must be positive, got {self.diameter}")
        object.__setattr__(self, "centre", centre)
        object.__setattr__(self, "diameter", float(self.diameter))

    @property
    def centre_array(self) -> np.ndarray:
        return np.asarray(self.centre, dtype=np.float64)


@dataclass(frozen=True)
class VisitAction:
    """The C probe placements of one visit."""

    probes: tuple[ProbeAction, ...]

    def __post_init__(self):
        object.__setattr__(self, "probes", tuple(self.probes))
        if len(self.probes) < 1:
            raise EnvError("a visit needs at least one probe")


@dataclass(frozen=True)
class NoiseModel:
    """Truncated Gaussian intraoperative noise on probe centre and diameter."""

    sigma_xyz: tuple[float, float, float] = (2.5, 2.5, 2.5)
    sigma_d: float = 5.0
    truncation: float = 2.0
    enabled: bool = True

    def __post_init__(self):
        if any(s < 0 for s in self.sigma_xyz) or self.sigma_d < 0:
            raise EnvError("noise sigmas must be >= 0")
        if not self.truncation > 0:
            raise EnvError("noise truncation must be > 0")


@dataclass(frozen=True)
class RewardShaping:
    """Penalty discouraging near-repeated probe placements.

    penalty = weight * sum over probe pairs of max(0, 1 - dist/repeat_radius),
    taken over pairs within the current visit and between the current visit
    and all history.  Weight 0 disables shaping.
    """

    repeat_penalty_weight: float = 10.0
    repeat_radius_mm: float = 5.0

    def __post_init__(self):
        if self.repeat_penalty_weight < 0 or self.repeat_radius_mm < 0:
            raise EnvError("shaping weight and radius must be >= 0")


@dataclass(frozen=True)
class EnvConfig:
    probes_per_visit: int = 5
    visits: int = 4
    d_min: float = 8.0
    d_max: float = 30.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    shaping: RewardShaping = field(default_factory=RewardShaping)
    gamma: float = 0.9

    def __post_init__(self):
        if self.probes_per_visit < 1 or self.visits < 1:
            raise EnvError("probes_per_visit and visits must be >= 1")
        if not (0 < self.d_min <= self.d_max):
            raise EnvError(f"need 0 < d_min <= d_max, got [{self.d_min}, {self.d_max}]")
        if not (0 <= self.gamma <= 1):
            raise EnvError(f"gamma must be in [0, 1], got {self.gamma}")

    def config_hash(self) -> str:
        """Stable short hash of all fields, for trajectory headers."""
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class EnvState:
    """Mutable episode state.  Mutated only by step(); owned by one worker.

    config is the EnvConfig the episode was reset with; consumers use it for
    the visit budget and action bounds without threading it separately.
    """

    case: Case
    config: "EnvConfig"
    remaining_tumour: BinaryMask
    ablated: BinaryMask
    image_now: "np.ndarray"
    t: int = 1
    history: list = field(default_factory=list)
    finished: bool = False
    infill_value: float = 0.0
    initial_tumour_count: int = 0

    @property
    def remaining_count(self) -> int:
        return self.remaining_tumour.count


@dataclass
class StepResult:
    next_state: EnvState
    reward: float
    per_probe_rewards: list
    realized: VisitAction
    done: bool


# ---------------------------------------------------------------- sampling


def truncated_normal(rng: np.random.Generator, sigma: float, truncation: float, size=None):
    """Zero-mean Gaussian samples with std sigma, rejected outside +/- truncation*sigma."""
    if sigma == 0:
        return 0.0 if size is None else np.zeros(size)
    n = 1 if size is None else int(np.prod(size))
    bound = truncation * sigma
    out = np.empty(n)
    filled = 0
    while filled < n:
        draw = rng.normal(0.0, sigma, size=n - filled)
        keep = draw[np.abs(draw) <= bound]
        out[filled:filled + keep.size] = keep
        filled += keep.size
    return float(out[0]) if size is None else out.reshape(size)


def truncated_normal_std(sigma: float, truncation: float) -> float:
    """Analytic standard deviation of the symmetric truncated normal."""
    from scipy.stats import norm

    a = truncation
    z = 2.0 * norm.cdf(a) - 1.0
    return sigma * np.sqrt(1.0 - 2.0 * a * norm.pdf(a) / z)


def apply_noise(action: VisitAction, noise: NoiseModel, rng: np.random.Generator,
                d_bounds: tuple[float, float] | None = None) -> VisitAction:
    """Perturb every probe by truncated Gaussian noise.

    Consumes rng in probe order, components x, y, z then diameter.  Noisy
    diameters clamp to d_bounds when given; centres are never clamped, a
    sphere may leave the grid and simply ablates nothing out there.
    Disabled noise returns the action unchanged.
    """
    if not noise.enabled:
        return action
    probes = []
    for probe in action.probes:
        delta = [truncated_normal(rng, s, noise.truncation) for s in noise.sigma_xyz]
        d = probe.diameter + truncated_normal(rng, noise.sigma_d, noise.truncation)
        if d_bounds is not None:
            d = min(max(d, d_bounds[0]), d_bounds[1])
        centre = tuple(c + dc for c, dc in zip(probe.centre, delta))
        probes.append(ProbeAction(centre, d))
    return VisitAction(tuple(probes))


# ---------------------------------------------------------------- geometry


def _sphere_ijk(meta: GridMeta, probe: ProbeAction):
    """Voxel (i, j, k) index arrays inside the probe's sphere.

    A voxel belongs to the sphere iff its centre lies within Euclidean mm
    distance diameter/2 of the probe centre (boundary inclusive).  Only the
    sphere's bounding box is scanned.
    """
    c = probe.centre_array
    r = 0.5 * probe.diameter
    origin = np.asarray(meta.origin)
    spacing = np.asarray(meta.spacing)
    lo = np.ceil((c - r - origin) / spacing).astype(np.int64)
    hi = np.floor((c + r - origin) / spacing).astype(np.int64)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.asarray(meta.dims) - 1)
    if np.any(lo > hi):
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty
    ax = [meta.axis_coords(a)[lo[a]: hi[a] + 1] - c[a] for a in range(3)]
    dist2 = (
        (ax[0] ** 2)[:, None, None]
        + (ax[1] ** 2)[None, :, None]
        + (ax[2] ** 2)[None, None, :]
    )
    ii, jj, kk = np.nonzero(dist2 <= r * r)
    return ii + lo[0], jj + lo[1], kk + lo[2]


def sphere_voxels(meta: GridMeta, probe: ProbeAction) -> np.ndarray:
    """Sorted flat indices (x-fastest layout) of voxels inside the sphere."""
    ii, jj, kk = _sphere_ijk(meta, probe)
    return np.sort(meta.linear_index(ii, jj, kk))


def repeat_penalty(new_probes, history, shaping: RewardShaping) -> float:
    """Shaping penalty over new-new and new-history probe centre pairs."""
    if shaping.repeat_penalty_weight == 0:
        return 0.0
    new = [p.centre_array for p in new_probes]
    old = [p.centre_array for p in history]
    radius = shaping.repeat_radius_mm
    total = 0.0
    for a in range(len(new)):
        others = new[a + 1:] + old
        for b in others:
            dist = float(np.linalg.norm(new[a] - b))
            if radius <= 0:
                total += 1.0 if dist == 0 else 0.0
            elif dist < radius:
                total += 1.0 - dist / radius
    return shaping.repeat_penalty_weight * total


# ---------------------------------------------------------------- MDP ops


def reset(case: Case, config: EnvConfig) -> EnvState:
    """Fresh episode state over a case: full tumour, nothing ablated, t = 1."""
    if case.tumour.count == 0:
        raise EnvError(f"case {case.id}: tumour mask is empty")
    return EnvState(
        case=case,
        config=config,
        remaining_tumour=case.tumour.copy(),
        ablated=BinaryMask(case.meta, np.zeros(case.meta.dims, dtype=bool)),
        image_now=case.image.values.copy(),
        t=1,
        history=[],
        finished=False,
        infill_value=gland_mean_intensity(case),
        initial_tumour_count=case.tumour.count,
    )


def reward(state: EnvState, realized: VisitAction, shaping: RewardShaping):
    """Visit reward on the current remaining-tumour mask.  Pure.

    Per-probe reward c counts remaining tumour voxels inside probe c's sphere
    that no earlier probe of this visit already covered (union semantics, so
    each voxel scores once per visit).  Total = sum - repeat penalty.
    """
    meta = state.case.meta
    rem = state.remaining_tumour.values
    covered = np.zeros(meta.dims, dtype=bool)
    per_probe = []
    for probe in realized.probes:
        ijk = _sphere_ijk(meta, probe)
        new = rem[ijk] & ~covered[ijk]
        per_probe.append(float(new.sum()))
        covered[ijk] = True
    total = float(sum(per_probe)) - repeat_penalty(realized.probes, state.history, shaping)
    return total, per_probe


def _ablate(state: EnvState, probes) -> int:
    """Erase the union of the probes' spheres from the state.  Returns voxels newly ablated."""
    meta = state.case.meta
    before = state.ablated.count
    for probe in probes:
        ijk = _sphere_ijk(meta, probe)
        state.remaining_tumour.values[ijk] = False
        state.ablated.values[ijk] = True
        state.image_now[ijk] = state.infill_value
    return state.ablated.count - before


def step(state: EnvState, nominal: VisitAction, config: EnvConfig,
         rng: np.random.Generator) -> StepResult:
    """Execute one visit: noise, reward on the pre-transition mask, ablation.

    Mutates state in place and returns it inside the StepResult.  The episode
    ends after visit T or as soon as the tumour is fully ablated.
    """
    if state.finished:
        raise EnvError("cannot step a finished episode")
    if len(nominal.probes) != config.probes_per_visit:
        raise EnvError(
            f"visit needs exactly {config.probes_per_visit} probes, got {len(nominal.probes)}"
        )
    for probe in nominal.probes:
        if not (config.d_min <= probe.diameter <= config.d_max):
            raise EnvError(
                f"probe diameter {probe.diameter} outside [{config.d_min}, {config.d_max}]"
            )

    realized = apply_noise(nominal, config.noise, rng, d_bounds=(config.d_min, config.d_max))
    total, per_probe = reward(state, realized, config.shaping)
    _ablate(state, realized.probes)
    state.history.extend(realized.probes)

    done = (state.t >= config.visits) or (not state.remaining_tumour.values.any())
    state.t = min(state.t + 1, config.visits)
    state.finished = done
    return StepResult(state, total, per_probe, realized, done)


def replay_probes(case: Case, visits) -> EnvState:
    """Apply recorded probe geometry (no noise, no budget checks) to a fresh state.

    visits is a list of probe lists; ragged visits are allowed so partially
    completed manual sessions replay exactly.
    """
    state = reset(case, EnvConfig())
    for probes in visits:
        if probes:
            _ablate(state, list(probes))
            state.history.extend(probes)
    state.t = max(1, len(visits))
    state.finished = True
    return state


# ---------------------------------------------------------------- plans


@dataclass
class Plan:
    """Full treatment record: nominal and realized actions plus rewards per visit."""

    case_id: str
    config_hash: str
    seed: int
    nominal: list = field(default_factory=list)     # list[VisitAction]
    realized: list = field(default_factory=list)    # list[VisitAction]
    rewards: list = field(default_factory=list)     # list[float], shaping included
    per_probe_rewards: list = field(default_factory=list)  # list[list[float]]

    @property
    def visit_count(self) -> int:
        return len(self.nominal)

    def append_visit(self, nominal: VisitAction, result: StepResult) -> None:
        self.nominal.append(nominal)
        self.realized.append(result.realized)
        self.rewards.append(result.reward)
        self.per_probe_rewards.append(list(result.per_probe_rewards))


TRAJ_FORMAT_LINE = "# cryoplan-traj v1"


def write_traj(path, plan: Plan) -> None:
    """Line-oriented trajectory log: one line per probe.

    Columns: t c ci cj ck d ri rj rk rd reward, nominal then realized mm
    values, reward being the probe's pre-penalty tumour-voxel count.
    """
    lines = [f"{TRAJ_FORMAT_LINE} case={plan.case_id} config={plan.config_hash} seed={plan.seed}"]
    for t in range(plan.visit_count):
        nom, real = plan.nominal[t], plan.realized[t]
        per_probe = plan.per_probe_rewards[t]
        for c, (pn, pr) in enumerate(zip(nom.probes, real.probes)):
            vals = [*pn.centre, pn.diameter, *pr.centre, pr.diameter, per_probe[c]]
            lines.append(f"{t + 1} {c + 1} " + " ".join(repr(v) for v in vals))
    _atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def read_traj(path) -> Plan:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(TRAJ_FORMAT_LINE):
        raise EnvError(f"{path}: not a cryoplan trajectory file")
    header = dict(
        part.split("=", 1) for part in lines[0][len(TRAJ_FORMAT_LINE):].split() if "=" in part
    )
    plan = Plan(
        case_id=header.get("case", ""),
        config_hash=header.get("config", ""),
        seed=int(header.get("seed", 0)),
    )
    visits: dict[int, list] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 11:
            raise EnvError(f"{path}: malformed probe line {line!r}")
        t, c = int(parts[0]), int(parts[1])
        nums = [float(p) for p in parts[2:]]
        visits.setdefault(t, []).append(
            (c, ProbeAction(tuple(nums[0:3]), nums[3]), ProbeAction(tuple(nums[4:7]), nums[7]), nums[8])
        )
    for t in sorted(visits):
        rows = sorted(visits[t], key=lambda r: r[0])
        plan.nominal.append(VisitAction(tuple(r[1] for r in rows)))
        plan.realized.append(VisitAction(tuple(r[2] for r in rows)))
        plan.per_probe_rewards.append([r[3] for r in rows])
        plan.rewards.append(float(sum(r[3] for r in rows)))
    return plan
