// Export artifacts: the backend writes the canonical .traj and results CSV
// server-side; the browser downloads a summary JSON plus a results row in
// the benchmark CSV format, built verbatim from backend-reported values.

import type { ExportResult, Snapshot } from "./types.js";

export const RESULTS_HEADER = "case_id,planner,seed,dice,nominal_dice,coverage,healthy_mm3,plan_time_s";

export interface DownloadFile {
  name: string;
  mime: string;
  text: string;
}

export function timestampSlug(date: Date): string {
  return date.toISOString().replace(/[:.]/g, "-");
}

export function buildExportFiles(snap: Snapshot, result: ExportResult, now: Date): DownloadFile[] {
  const stamp = timestampSlug(now);
  const seed = snap.noise ? 1 : 0;
  const row = [
    snap.case_id,
    "human",
    String(seed),
    String(result.dice),
    String(result.nominal_dice),
    String(result.coverage),
    String(result.healthy_mm3),
    String(result.plan_time_s),
  ].join(",");
  const summary = {
    case_id: snap.case_id,
    session_id: snap.session_id,
    exported_at: now.toISOString(),
    noise: snap.noise,
    visits_used: snap.t,
    ...result,
  };
  return [
    {
      name: `${snap.case_id}_${stamp}.summary.json`,
      mime: "application/json",
      text: JSON.stringify(summary, null, 2) + "\n",
    },
    {
      name: `${snap.case_id}_${stamp}.results.csv`,
      mime: "text/csv",
      text: `${RESULTS_HEADER}\n${row}\n`,
    },
  ];
}

export function triggerDownload(file: DownloadFile): void {
  const url = URL.createObjectURL(new Blob([file.text], { type: file.mime }));
  const link = document.createElement("a");
  link.href = url;
  link.download = file.name;
  link.click();
  URL.revokeObjectURL(url);
}
