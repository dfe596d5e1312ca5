"""Record real backend responses into tests/fixtures/recorded.json.

The API contract tests replay these fixtures against the TypeScript client,
so client-side parsing is checked against genuine payloads rather than
hand-written ones.  Rerun after any backend contract change:

    python3 scripts/record-fixtures.py
"""

import json
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
from fastapi.testclient import TestClient

from cryoplan.config import parse_run_config
from cryoplan.service import build_app
from cryoplan.volume import PhantomConfig, generate_phantom, save_case

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "recorded.json"


def tumour_world_point(case):
    idx = np.argwhere(case.tumour.values)[0]
    return list(np.asarray(case.meta.origin) + idx * np.asarray(case.meta.spacing))


def main() -> None:
    with TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        data = tmp / "data"
        data.mkdir()
        phantom = PhantomConfig(
            dims=(32, 32, 32),
            gland_semi_axes_lo=(10.0, 9.0, 9.0),
            gland_semi_axes_hi=(13.0, 11.0, 11.0),
            blob_count=(1, 2),
            blob_radius=(3.5, 5.0),
            blob_separation_mm=2.0,
            seed=11,
        )
        cases = [generate_phantom(phantom, i) for i in range(2)]
        for case in cases:
            save_case(case, data / f"{case.id}.cvol")
        cfg = parse_run_config({
            "out_dir": str(tmp / "run"),
            "dataset": {"dir": str(data)},
            "env": {"probes_per_visit": 3, "visits": 2, "d_min": 8.0, "d_max": 12.0},
        })
        client = TestClient(build_app(cfg, tmp / "run"))

        rec = {}
        rec["health"] = client.get("/api/v1/healthz").json()
        rec["cases"] = client.get("/api/v1/cases").json()

        case_id = rec["cases"][0]["id"]
        start = client.post("/api/v1/sessions",
                            json={"case_id": case_id, "noise": False, "seed": 0})
        rec["session"] = start.json()
        sid = rec["session"]["session_id"]

        centre = tumour_world_point(cases[0])
        place = client.post(f"/api/v1/sessions/{sid}/probes",
                            json={"centre": centre, "diameter": 9.0})
        rec["place"] = place.json()

        rec["suggestion"] = client.get(
            f"/api/v1/sessions/{sid}/suggest", params={"planner": "centre", "seed": 0}).json()

        slice_resp = client.get(f"/api/v1/sessions/{sid}/slice",
                                params={"axis": "x", "index": 5, "overlays": "gland,tumour"})
        rec["slice_geometry"] = json.loads(slice_resp.headers["X-Slice-Geometry"])
        rec["slice_content_type"] = slice_resp.headers["content-type"]
        rec["slice_png_bytes"] = len(slice_resp.content)

        rec["advance"] = client.post(f"/api/v1/sessions/{sid}/advance").json()
        rec["export"] = client.post(f"/api/v1/sessions/{sid}/export").json()

        bad = client.post(f"/api/v1/sessions/{sid}/probes",
                          json={"centre": centre, "diameter": 99.0})
        rec["error_bad_diameter"] = {"status": bad.status_code, "body": bad.json()}
        missing = client.get("/api/v1/sessions/nope")
        rec["error_unknown_session"] = {"status": missing.status_code, "body": missing.json()}

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(rec, indent=2) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
