"""Benchmark harness: Dice, per-case episode runs, significance tests, sweeps.

The primary metric is Dice between the original tumour mask and the union
of all realized ablation spheres across the episode, executed under noise
with a fixed per-(case, planner) seed.  A noise-free replay of the nominal
plan is reported alongside as nominal_dice.  Planning time counts planner
calls only, on a monotonic clock.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .environment import EnvConfig, Plan, reset, replay_probes, step
from .planners import PlannerSpec, plan_visit
from .render import render_plan_overlay  # noqa: F401  (part of this module's interface)
from .volume import BinaryMask, Case, _atomic_write_bytes

__all__ = [
    "EvalError", "CaseResult", "TTestResult", "PlannerAggregate", "AblationRow",
    "EvalReport", "dice", "case_seed", "run_episode", "paired_t_test",
    "evaluate_planners", "ablation_sweep", "write_results_csv", "read_results_csv",
    "write_report", "render_plan_overlay", "RESULTS_HEADER",
]

log = logging.getLogger(__name__)

RESULTS_HEADER = "case_id,planner,seed,dice,nominal_dice,coverage,healthy_mm3,plan_time_s"


class EvalError(RuntimeError):
    """Evaluation protocol failure (grid mismatch, planner error, bad inputs)."""


# ---------------------------------------------------------------- metrics


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """2|A∩B| / (|A|+|B|); 1.0 when both masks are empty, 0.0 when one is."""
    if a.meta != b.meta:
        raise EvalError(f"dice on mismatched grids: {a.meta.dims} vs {b.meta.dims}")
    na, nb = a.count, b.count
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    inter = int((a.values & b.values).sum())
    return 2.0 * inter / (na + nb)


def case_seed(base_seed: int, case_id: str, tag: str) -> int:
    """Stable per-(case, tag) seed so benchmark runs are reproducible."""
    digest = hashlib.sha256(f"{base_seed}:{case_id}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


# ---------------------------------------------------------------- episodes


@dataclass
class CaseResult:
    """One benchmark row; mirrors the results CSV columns."""

    case_id: str
    planner: str
    seed: int
    dice: float
    nominal_dice: float
    coverage: float
    healthy_mm3: float
    plan_time_s: float

    def __post_init__(self):
        if not (0 <= self.dice <= 1 and 0 <= self.nominal_dice <= 1):
            raise EvalError(f"{self.case_id}: dice out of [0,1]")
        if not (0 <= self.coverage <= 1):
            raise EvalError(f"{self.case_id}: coverage out of [0,1]")
        if self.plan_time_s < 0 or self.healthy_mm3 < 0:
            raise EvalError(f"{self.case_id}: negative time or volume")


def run_episode(case: Case, spec: PlannerSpec, config: EnvConfig, seed: int,
                planner_name: str | None = None) -> tuple[Plan, CaseResult]:
    """Run one full treatment episode and score it.

    One numpy generator drives both planner randomness and environment
    noise, so (case, spec, config, seed) fully determines everything but
    wall-clock time.
    """
    name = planner_name or spec.kind
    rng = np.random.default_rng(seed)
    state = reset(case, config)
    plan = Plan(case.id, config.config_hash(), seed)
    plan_time = 0.0
    while not state.finished:
        t0 = time.perf_counter()
        try:
            action = plan_visit(state, spec, config, rng)
        except Exception as exc:
            raise EvalError(f"case {case.id}: {name} planner failed at visit {state.t}: {exc}") from exc
        plan_time += time.perf_counter() - t0
        result = step(state, action, config, rng)
        plan.append_visit(action, result)

    nominal_state = replay_probes(case, [v.probes for v in plan.nominal])
    result_row = CaseResult(
        case_id=case.id,
        planner=name,
        seed=seed,
        dice=dice(case.tumour, state.ablated),
        nominal_dice=dice(case.tumour, nominal_state.ablated),
        coverage=1.0 - state.remaining_count / state.initial_tumour_count,
        healthy_mm3=float((state.ablated.values & ~case.tumour.values).sum())
        * case.meta.voxel_volume_mm3,
        plan_time_s=plan_time,
    )
    return plan, result_row


# ---------------------------------------------------------------- statistics


@dataclass(frozen=True)
class TTestResult:
    """Two-sided paired t-test; p is NaN when the differences have no variance."""

    t: float
    p: float
    zero_variance: bool = False


def paired_t_test(a, b) -> TTestResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise EvalError(f"paired test needs two equal-length vectors of >= 2 values, got {a.shape} vs {b.shape}")
    diff = a - b
    if np.std(diff, ddof=1) == 0.0:
        t = 0.0 if diff[0] == 0 else float(np.sign(diff[0]) * np.inf)
        return TTestResult(t=t, p=float("nan"), zero_variance=True)
    res = stats.ttest_rel(a, b)
    return TTestResult(t=float(res.statistic), p=float(res.pvalue))


@dataclass
class PlannerAggregate:
    planner: str
    n: int
    mean_dice: float
    std_dice: float
    mean_nominal_dice: float
    mean_coverage: float
    mean_healthy_mm3: float
    mean_plan_time_s: float


def _aggregate(name: str, rows: list[CaseResult]) -> PlannerAggregate:
    d = np.array([r.dice for r in rows])
    return PlannerAggregate(
        planner=name,
        n=len(rows),
        mean_dice=float(d.mean()),
        std_dice=float(d.std(ddof=1)) if len(rows) > 1 else 0.0,
        mean_nominal_dice=float(np.mean([r.nominal_dice for r in rows])),
        mean_coverage=float(np.mean([r.coverage for r in rows])),
        mean_healthy_mm3=float(np.mean([r.healthy_mm3 for r in rows])),
        mean_plan_time_s=float(np.mean([r.plan_time_s for r in rows])),
    )


@dataclass
class AblationRow:
    """One swept value; error is set (and metrics NaN) when that run failed."""

    component: str
    value: float
    mean_dice: float = float("nan")
    std_dice: float = float("nan")
    train_time_s: float = float("nan")
    curve: list = field(default_factory=list)
    error: str = ""


@dataclass
class EvalReport:
    results: list = field(default_factory=list)        # CaseResult rows
    aggregates: dict = field(default_factory=dict)     # planner -> PlannerAggregate
    pairwise: dict = field(default_factory=dict)       # (a, b) -> TTestResult
    ablations: list = field(default_factory=list)      # AblationRow


def evaluate_planners(cases, specs: dict[str, PlannerSpec], config: EnvConfig,
                      base_seed: int = 0) -> EvalReport:
    """Benchmark every planner on every case with paired per-case seeds.

    Case order is sorted by id; results are deterministic given seeds
    (excluding wall-times).  Pairwise paired t-tests compare per-case Dice
    between every pair of planners.
    """
    cases = sorted(cases, key=lambda c: c.id)
    report = EvalReport()
    per_planner: dict[str, list[CaseResult]] = {name: [] for name in specs}
    for case in cases:
        for name, spec in specs.items():
            seed = case_seed(base_seed, case.id, name)
            _, row = run_episode(case, spec, config, seed, planner_name=name)
            report.results.append(row)
            per_planner[name].append(row)
    for name in specs:
        report.aggregates[name] = _aggregate(name, per_planner[name])
    names = list(specs)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            report.pairwise[(a, b)] = paired_t_test(
                [r.dice for r in per_planner[a]], [r.dice for r in per_planner[b]]
            )
    return report


# ---------------------------------------------------------------- ablations


def ablation_sweep(component: str, values, dev_cases, holdout_cases,
                   env_config: EnvConfig, train_config, policy=None,
                   out_dir=None) -> list[AblationRow]:
    """Sweep one component, retraining where the component shapes training.

    shaping (penalty weight) and C (probes per visit) retrain per value; T
    (visit budget) re-evaluates a single policy — the one passed in, or one
    trained at the base configuration.  Per-value failures are recorded on
    their row instead of aborting the sweep.
    """
    from .rl.policy import PolicyPlanner
    from .rl.training import train

    if component not in ("shaping", "C", "T"):
        raise EvalError(f"unknown ablation component {component!r}, expected shaping, C or T")
    rows = []
    if component == "T" and policy is None:
        policy, _ = train(dev_cases, env_config, train_config)
    for value in values:
        row = AblationRow(component=component, value=float(value))
        rows.append(row)
        try:
            if component == "shaping":
                env = replace(env_config, shaping=replace(env_config.shaping,
                                                          repeat_penalty_weight=float(value)))
                t0 = time.perf_counter()
                net, curve = train(dev_cases, env, train_config)
                row.train_time_s = time.perf_counter() - t0
                row.curve = curve
            elif component == "C":
                env = replace(env_config, probes_per_visit=int(value))
                t0 = time.perf_counter()
                net, curve = train(dev_cases, env, train_config)
                row.train_time_s = time.perf_counter() - t0
                row.curve = curve
            else:
                env = replace(env_config, visits=int(value))
                net = policy
            spec = PlannerSpec("rl", policy=PolicyPlanner(net) if not hasattr(net, "plan_visit") else net)
            report = evaluate_planners(holdout_cases, {"rl": spec}, env,
                                       base_seed=train_config.seed)
            agg = report.aggregates["rl"]
            row.mean_dice, row.std_dice = agg.mean_dice, agg.std_dice
        except Exception as exc:  # per-value failures become visible rows
            log.warning("ablation %s=%s failed: %s", component, value, exc)
            row.error = str(exc)
    return rows


# ---------------------------------------------------------------- reports


def _result_line(r: CaseResult) -> str:
    return ",".join(
        [r.case_id, r.planner, str(r.seed), repr(r.dice), repr(r.nominal_dice),
         repr(r.coverage), repr(r.healthy_mm3), repr(r.plan_time_s)]
    )


def write_results_csv(path, results: list[CaseResult]) -> None:
    """Full-precision per-case rows (repr round-trips every float exactly)."""
    lines = [RESULTS_HEADER] + [_result_line(r) for r in results]
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_results_csv(path) -> list[CaseResult]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULTS_HEADER.split(","):
            raise EvalError(f"{path}: unexpected results header {reader.fieldnames}")
        return [
            CaseResult(
                case_id=row["case_id"], planner=row["planner"], seed=int(row["seed"]),
                dice=float(row["dice"]), nominal_dice=float(row["nominal_dice"]),
                coverage=float(row["coverage"]), healthy_mm3=float(row["healthy_mm3"]),
                plan_time_s=float(row["plan_time_s"]),
            )
            for row in reader
        ]


def write_report(path, report: EvalReport) -> None:
    """Human-readable benchmark summary with a machine-readable aggregate block."""
    out = io.StringIO()
    out.write("planner benchmark\n=================\n\n")
    out.write(f"{'planner':<12} {'n':>4} {'dice':>16} {'nominal':>8} {'coverage':>9} "
              f"{'healthy mm3':>12} {'plan s':>8}\n")
    for agg in report.aggregates.values():
        out.write(
            f"{agg.planner:<12} {agg.n:>4} {agg.mean_dice:>8.4f} +/- {agg.std_dice:<5.4f}"
            f" {agg.mean_nominal_dice:>8.4f} {agg.mean_coverage:>9.4f}"
            f" {agg.mean_healthy_mm3:>12.1f} {agg.mean_plan_time_s:>8.3f}\n"
        )
    if report.pairwise:
        out.write("\npaired t-tests (dice)\n")
        for (a, b), tt in report.pairwise.items():
            p = "undefined (zero variance)" if tt.zero_variance else f"{tt.p:.3e}"
            out.write(f"  {a} vs {b}: t={tt.t:.4f} p={p}\n")
    if report.ablations:
        out.write("\nablations\n")
        for row in report.ablations:
            if row.error:
                out.write(f"  {row.component}={row.value:g}: FAILED ({row.error})\n")
            else:
                extra = f" train_s={row.train_time_s:.1f}" if np.isfinite(row.train_time_s) else ""
                out.write(f"  {row.component}={row.value:g}: dice {row.mean_dice:.4f} "
                          f"+/- {row.std_dice:.4f}{extra}\n")
    out.write("\naggregates_csv\n")
    out.write("planner,n,mean_dice,std_dice,mean_nominal_dice,mean_coverage,"
              "mean_healthy_mm3,mean_plan_time_s\n")
    for agg in report.aggregates.values():
        out.write(
            f"{agg.planner},{agg.n},{repr(agg.mean_dice)},{repr(agg.std_dice)},"
            f"{repr(agg.mean_nominal_dice)},{repr(agg.mean_coverage)},"
            f"{repr(agg.mean_healthy_mm3)},{repr(agg.mean_plan_time_s)}\n"
        )
    _atomic_write_bytes(path, out.getvalue().encode("utf-8"))
