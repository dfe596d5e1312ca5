"""Replay a stored trajectory against a case and print the outcome as JSON.

Usage: python -m cryoplan.replay CASE.cvol PLAN.traj

Reapplies the realized probes through the environment geometry and reports
Dice, coverage and ablated-healthy volume, so an exported plan can be
checked independently of whatever produced it.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from .environment import read_traj, replay_probes
from .eval import dice
from .volume import load_case


def replay_summary(case_path, traj_path) -> dict:
    case = load_case(Path(case_path))
    plan = read_traj(Path(traj_path))
    realized = replay_probes(case, [list(v.probes) for v in plan.realized])
    nominal = replay_probes(case, [list(v.probes) for v in plan.nominal])
    remaining = realized.remaining_count
    initial = realized.initial_tumour_count
    return {
        "case_id": case.id,
        "traj_case_id": plan.case_id,
        "visits": len(plan.realized),
        "probes": sum(len(v.probes) for v in plan.realized),
        "dice": dice(case.tumour, realized.ablated),
        "nominal_dice": dice(case.tumour, nominal.ablated),
        "coverage": 1.0 - remaining / initial if initial else 1.0,
        "healthy_mm3": float((realized.ablated.values & ~case.tumour.values).sum())
        * case.meta.voxel_volume_mm3,
    }


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: python -m cryoplan.replay CASE.cvol PLAN.traj", file=sys.stderr)
        return 1
    print(json.dumps(replay_summary(argv[0], argv[1]), sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
