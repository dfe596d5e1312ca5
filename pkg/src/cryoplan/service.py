"""HTTP backend for manual planning: sessions over the same environment.

Probes arrive one at a time (the operator clicks), so the environment's
visit transition is decomposed: each accepted probe is noised (when the
session says so), scored against the current remaining tumour and ablated
immediately.  Union semantics make this exactly equivalent to stepping
whole visits, which is what makes exported trajectories replay bit-for-bit
through the offline environment.

Sessions live in memory, serialized per session by a lock, with
write-through JSONL logs for crash forensics.  All mutating endpoints log;
GET-class endpoints never change state.
"""

from __future__ import annotations

import io
import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .config import RunConfig
from .environment import (EnvConfig, NoiseModel, Plan, ProbeAction, VisitAction,
                          _ablate, _sphere_ijk, apply_noise, reset)
from .eval import CaseResult, case_seed, dice, write_results_csv
from .planners import PlannerError, PlannerSpec, plan_visit
from .render import composite_slice, parse_axis
from .volume import Case, load_case

__all__ = ["build_app", "ApiError"]

API = "/api/v1"


class ApiError(Exception):
    """JSON error with an HTTP status, a short code and a human message."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class SessionData:
    id: str
    case: Case
    config: EnvConfig
    state: object
    rng: np.random.Generator
    noise: bool
    log_path: Path
    created_mono: float = field(default_factory=time.monotonic)
    created_wall: float = field(default_factory=time.time)
    last_place_mono: float | None = None
    probes_this_visit: int = 0
    nominal_visits: list = field(default_factory=list)   # list[list[ProbeAction]]
    realized_visits: list = field(default_factory=list)
    probe_rewards: list = field(default_factory=list)    # parallel per-probe counts
    lock: threading.Lock = field(default_factory=threading.Lock)

    def snapshot(self) -> dict:
        meta = self.case.meta
        st = self.state
        return {
            "session_id": self.id,
            "case_id": self.case.id,
            "t": st.t,
            "visits": self.config.visits,
            "probes_per_visit": self.config.probes_per_visit,
            "probes_placed_this_visit": self.probes_this_visit,
            "finished": st.finished,
            "noise": self.noise,
            "d_min": self.config.d_min,
            "d_max": self.config.d_max,
            "dims": list(meta.dims),
            "spacing_mm": list(meta.spacing),
            "origin_mm": list(meta.origin),
            "world_min_mm": [float(v) for v in meta.world_min],
            "world_max_mm": [float(v) for v in meta.world_max],
            "dice": dice(self.case.tumour, st.ablated),
            "coverage": 1.0 - st.remaining_count / st.initial_tumour_count,
            "remaining_tumour_voxels": st.remaining_count,
            "initial_tumour_voxels": st.initial_tumour_count,
        }


_OVERLAY_CHOICES = ("gland", "tumour", "ablation")


def _overlay_names(spec: str) -> tuple[str, ...]:
    """Overlay selector: all/true, none/false, or a comma list of layer names."""
    token = spec.strip().lower()
    if token in ("", "none", "false", "0"):
        return ()
    if token in ("all", "true", "1"):
        return _OVERLAY_CHOICES
    names = {part.strip() for part in token.split(",") if part.strip()}
    unknown = names.difference(_OVERLAY_CHOICES)
    if unknown:
        raise ApiError(400, "bad_overlays",
                       f"unknown overlay layer(s): {', '.join(sorted(unknown))}; "
                       f"expected a subset of {', '.join(_OVERLAY_CHOICES)}")
    return tuple(name for name in _OVERLAY_CHOICES if name in names)


def _probe_from_body(body: dict, config: EnvConfig) -> ProbeAction:
    try:
        centre = body["centre"]
        diameter = float(body["diameter"])
        if len(centre) != 3:
            raise ValueError
        centre = tuple(float(v) for v in centre)
    except (KeyError, TypeError, ValueError):
        raise ApiError(400, "bad_probe",
                       "probe body must be {centre: [x,y,z] mm, diameter: mm}") from None
    if not (config.d_min <= diameter <= config.d_max):
        raise ApiError(409, "bad_diameter",
                       f"diameter {diameter} outside [{config.d_min}, {config.d_max}]")
    return ProbeAction(centre, diameter)


def build_app(cfg: RunConfig, out_dir: Path) -> FastAPI:
    dataset_dir = Path(cfg.dataset.dir)
    out_dir = Path(out_dir)
    sessions: dict[str, SessionData] = {}
    sessions_lock = threading.Lock()
    policy_cache: dict[str, object] = {}

    app = FastAPI(title="cryoplan manual planning backend", docs_url=None, redoc_url=None)

    @app.exception_handler(ApiError)
    async def _api_error(_, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def _validation(_, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"code": "validation", "message": str(exc)})

    def case_paths() -> list[Path]:
        return sorted(dataset_dir.glob("*.cvol"), key=lambda p: p.stem)

    def get_session(session_id: str) -> SessionData:
        with sessions_lock:
            session = sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown_session", f"no session {session_id}")
        return session

    def log_event(session: SessionData, op: str, payload: dict) -> None:
        line = json.dumps({"op": op, "wall_time": time.time(), "session": session.id,
                           **payload}, sort_keys=True)
        session.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(session.log_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()

    # ------------------------------------------------------------ cases

    @app.get(API + "/healthz")
    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "cases": len(case_paths())}

    @app.get(API + "/cases")
    def list_cases():
        out = []
        for path in case_paths():
            case = load_case(path)
            out.append({
                "id": case.id,
                "dims": list(case.meta.dims),
                "spacing_mm": list(case.meta.spacing),
                "tumour_voxels": case.tumour.count,
            })
        return out

    # ------------------------------------------------------------ sessions

    @app.post(API + "/sessions", status_code=201)
    def start_session(body: dict = Body(default={})):
        case_id = body.get("case_id")
        if not isinstance(case_id, str) or not case_id:
            raise ApiError(400, "bad_request", "body must carry a case_id string")
        noise = bool(body.get("noise", False))
        seed = int(body.get("seed", 0))
        path = dataset_dir / f"{case_id}.cvol"
        if not path.exists():
            raise ApiError(404, "unknown_case", f"no case {case_id} in {dataset_dir}")
        case = load_case(path)
        config = cfg.env if noise else _noise_off(cfg.env)
        session = SessionData(
            id=uuid.uuid4().hex[:12],
            case=case,
            config=config,
            state=reset(case, config),
            rng=np.random.default_rng(case_seed(seed, case_id, "manual-session")),
            noise=noise,
            log_path=out_dir / "sessions" / "pending.jsonl",
        )
        session.log_path = out_dir / "sessions" / f"{session.id}.jsonl"
        session.nominal_visits.append([])
        session.realized_visits.append([])
        session.probe_rewards.append([])
        with sessions_lock:
            sessions[session.id] = session
        log_event(session, "start", {"case_id": case_id, "noise": noise, "seed": seed})
        return session.snapshot()

    @app.get(API + "/sessions/{session_id}")
    def session_info(session_id: str):
        session = get_session(session_id)
        with session.lock:
            return session.snapshot()

    @app.post(API + "/sessions/{session_id}/probes")
    def place_probe(session_id: str, body: dict = Body(...)):
        session = get_session(session_id)
        with session.lock:
            state = session.state
            if state.finished:
                raise ApiError(409, "finished", "episode is finished; no further probes")
            if session.probes_this_visit >= session.config.probes_per_visit:
                raise ApiError(409, "budget_spent",
                               f"visit {state.t} already has {session.config.probes_per_visit} "
                               "probes; advance the visit first")
            nominal = _probe_from_body(body, session.config)
            if session.noise:
                realized = apply_noise(
                    VisitAction((nominal,)), session.config.noise, session.rng,
                    d_bounds=(session.config.d_min, session.config.d_max),
                ).probes[0]
            else:
                realized = nominal

            ijk = _sphere_ijk(session.case.meta, realized)
            new_tumour = int(state.remaining_tumour.values[ijk].sum())
            newly_ablated = _ablate(state, [realized])
            state.history.append(realized)
            session.probes_this_visit += 1
            session.nominal_visits[-1].append(nominal)
            session.realized_visits[-1].append(realized)
            session.probe_rewards[-1].append(float(new_tumour))
            session.last_place_mono = time.monotonic()
            if state.remaining_count == 0:
                state.finished = True

            bbox = {}
            if ijk[0].size:
                bbox = {"lo": [int(ix.min()) for ix in ijk], "hi": [int(ix.max()) for ix in ijk]}
            changed = {"new_ablated_voxels": newly_ablated,
                       "new_tumour_voxels": new_tumour, "bbox": bbox}
            log_event(session, "place", {
                "t": state.t,
                "nominal": {"centre": list(nominal.centre), "diameter": nominal.diameter},
                "realized": {"centre": list(realized.centre), "diameter": realized.diameter},
                "changed": changed,
            })
            return {**session.snapshot(), "changed": changed,
                    "realized": {"centre": list(realized.centre), "diameter": realized.diameter}}

    @app.post(API + "/sessions/{session_id}/advance")
    def advance_visit(session_id: str):
        session = get_session(session_id)
        with session.lock:
            state = session.state
            if state.finished:
                raise ApiError(409, "finished", "episode is finished")
            if state.t >= session.config.visits:
                raise ApiError(409, "past_final_visit",
                               f"already at the final visit {state.t} of {session.config.visits}")
            state.t += 1
            session.probes_this_visit = 0
            session.nominal_visits.append([])
            session.realized_visits.append([])
            session.probe_rewards.append([])
            log_event(session, "advance", {"t": state.t})
            return session.snapshot()

    # ------------------------------------------------------------ rendering

    @app.get(API + "/sessions/{session_id}/slice")
    def get_slice(session_id: str, axis: str = "z", index: int = -1, overlays: str = "all"):
        session = get_session(session_id)
        try:
            ax = parse_axis(axis)
        except ValueError as exc:
            raise ApiError(400, "bad_axis", str(exc)) from None
        wanted = _overlay_names(overlays)
        meta = session.case.meta
        if index == -1:
            index = meta.dims[ax] // 2
        if not (0 <= index < meta.dims[ax]):
            raise ApiError(400, "bad_index",
                           f"index {index} out of range for axis {'xyz'[ax]} "
                           f"({meta.dims[ax]} voxels)")
        with session.lock:
            img = session.state.image_now
            sources = {
                "gland": session.case.gland.values,
                "tumour": session.state.remaining_tumour.values,
                "ablation": session.state.ablated.values,
            }
            layers = {name: sources[name].take(index, axis=ax) for name in wanted}
            rgb = composite_slice(img.take(index, axis=ax), layers,
                                  vmin=float(session.case.image.values.min()),
                                  vmax=float(session.case.image.values.max()))
        plane_axes = [a for a in range(3) if a != ax]
        buf = io.BytesIO()
        Image.fromarray(np.round(rgb * 255.0).clip(0, 255).astype(np.uint8)).save(buf, format="PNG")
        geometry = {
            "axis": "xyz"[ax],
            "index": index,
            # pixel (row, col) covers voxel (row, col) along these axes
            "row_axis": "xyz"[plane_axes[0]],
            "col_axis": "xyz"[plane_axes[1]],
            "rows": meta.dims[plane_axes[0]],
            "cols": meta.dims[plane_axes[1]],
            "row_spacing_mm": meta.spacing[plane_axes[0]],
            "col_spacing_mm": meta.spacing[plane_axes[1]],
            "row_origin_mm": meta.origin[plane_axes[0]],
            "col_origin_mm": meta.origin[plane_axes[1]],
            "slice_world_mm": float(meta.axis_coords(ax)[index]),
        }
        return Response(content=buf.getvalue(), media_type="image/png",
                        headers={"X-Slice-Geometry": json.dumps(geometry),
                                 "Cache-Control": "no-store"})

    # ------------------------------------------------------------ advice

    @app.get(API + "/sessions/{session_id}/suggest")
    def suggest_plan(session_id: str, planner: str = "geometric", seed: int = 0):
        session = get_session(session_id)
        spec = _planner_spec(planner)
        with session.lock:
            if session.state.remaining_count == 0:
                raise ApiError(409, "finished", "tumour fully ablated; nothing to suggest")
            rng = np.random.default_rng(case_seed(seed, session.case.id, f"suggest-{planner}"))
            try:
                visit = plan_visit(session.state, spec, session.config, rng)
            except PlannerError as exc:
                raise ApiError(409, "planner_failed", str(exc)) from None
        return {
            "planner": planner,
            "seed": seed,
            "probes": [{"centre": list(p.centre), "diameter": p.diameter} for p in visit.probes],
        }

    def _planner_spec(name: str) -> PlannerSpec:
        pc = cfg.planner_config(name) if name in ("random", "centre", "geometric", "rl") else None
        if pc is None:
            raise ApiError(400, "unknown_planner",
                           f"unknown planner {name!r}; expected random, centre, geometric or rl")
        if pc.kind != "rl":
            return PlannerSpec(pc.kind, diameter_grid=pc.diameter_grid,
                               geometric=pc.geometric_settings())
        if "rl" not in policy_cache:
            from .rl.checkpoint import CheckpointError, load_checkpoint
            from .rl.policy import PolicyPlanner

            ckpt = Path(pc.checkpoint) if pc.checkpoint else out_dir / "policy.ckpt"
            try:
                net, _, _ = load_checkpoint(ckpt)
            except CheckpointError as exc:
                raise ApiError(409, "checkpoint_missing", str(exc)) from None
            policy_cache["rl"] = PolicyPlanner(net)
        return PlannerSpec("rl", policy=policy_cache["rl"])

    # ------------------------------------------------------------ export

    @app.post(API + "/sessions/{session_id}/export")
    def export_session(session_id: str):
        session = get_session(session_id)
        with session.lock:
            state = session.state
            plan = Plan(session.case.id, session.config.config_hash(),
                        seed=0 if not session.noise else 1)
            for nom, real, rew in zip(session.nominal_visits, session.realized_visits,
                                      session.probe_rewards):
                if not nom:
                    continue
                plan.nominal.append(VisitAction(tuple(nom)))
                plan.realized.append(VisitAction(tuple(real)))
                plan.per_probe_rewards.append(list(rew))
                plan.rewards.append(float(sum(rew)))

            session_dir = out_dir / "sessions"
            traj_path = session_dir / f"{session.id}.traj"
            csv_path = session_dir / f"{session.id}.results.csv"
            from .environment import write_traj

            write_traj(traj_path, plan)
            plan_time = 0.0
            if session.last_place_mono is not None:
                plan_time = session.last_place_mono - session.created_mono
            row = CaseResult(
                case_id=session.case.id,
                planner="human",
                seed=plan.seed,
                dice=dice(session.case.tumour, state.ablated),
                nominal_dice=_nominal_dice(session),
                coverage=1.0 - state.remaining_count / state.initial_tumour_count,
                healthy_mm3=float((state.ablated.values & ~session.case.tumour.values).sum())
                * session.case.meta.voxel_volume_mm3,
                plan_time_s=plan_time,
            )
            write_results_csv(csv_path, [row])
            log_event(session, "export", {"traj": str(traj_path), "results": str(csv_path)})
            return {
                "traj_path": str(traj_path),
                "results_path": str(csv_path),
                "dice": row.dice,
                "nominal_dice": row.nominal_dice,
                "coverage": row.coverage,
                "healthy_mm3": row.healthy_mm3,
                "plan_time_s": row.plan_time_s,
            }

    def _nominal_dice(session: SessionData) -> float:
        from .environment import replay_probes

        visits = [v for v in session.nominal_visits if v]
        if not visits:
            return 0.0
        replayed = replay_probes(session.case, visits)
        return dice(session.case.tumour, replayed.ablated)

    frontend = _frontend_dir()
    if frontend is not None:
        app.mount("/", StaticFiles(directory=str(frontend), html=True), name="ui")
    return app


def _noise_off(env: EnvConfig) -> EnvConfig:
    from dataclasses import replace

    return replace(env, noise=NoiseModel(
        sigma_xyz=env.noise.sigma_xyz, sigma_d=env.noise.sigma_d,
        truncation=env.noise.truncation, enabled=False,
    ))


def _frontend_dir() -> Path | None:
    here = Path(__file__).resolve()
    for candidate in (Path.cwd() / "frontend" / "dist",
                      here.parents[2] / "frontend" / "dist",
                      here.parents[3] / "frontend" / "dist" if len(here.parents) > 3 else None):
        if candidate is not None and candidate.is_dir():
            return candidate
    return None
