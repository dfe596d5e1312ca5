// Session controller: every mutation of backend state funnels through here,
// serialized to one in-flight request (the backend enforces visit budgets;
// the queue keeps double-clicks from racing them).  DOM code binds to the
// store and calls these methods; nothing in here touches the DOM.

import { ApiClient, ApiError } from "./api.js";
import {
  applySnapshot,
  canAdvance,
  canPlace,
  recordPlacement,
  Store,
} from "./state.js";
import type { CaseInfo, ExportResult, Snapshot, Suggestion } from "./types.js";

export class Controller {
  readonly store = new Store();
  cases: CaseInfo[] = [];

  constructor(readonly api: ApiClient) {}

  private fail(err: unknown): null {
    const message = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    this.store.update((s) => ({ ...s, busy: false, error: message }));
    return null;
  }

  /** One mutating call at a time; concurrent attempts are dropped, not queued. */
  private async mutate<T>(fn: () => Promise<T>): Promise<T | null> {
    if (this.store.get().busy) return null;
    this.store.update((s) => ({ ...s, busy: true, error: null }));
    try {
      const out = await fn();
      this.store.update((s) => ({ ...s, busy: false }));
      return out;
    } catch (err) {
      return this.fail(err);
    }
  }

  async loadCases(): Promise<CaseInfo[]> {
    try {
      this.cases = await this.api.listCases();
    } catch (err) {
      this.fail(err);
      this.cases = [];
    }
    return this.cases;
  }

  async startSession(caseId: string, noise = false, seed = 0): Promise<Snapshot | null> {
    return this.mutate(async () => {
      const snap = await this.api.startSession(caseId, noise, seed);
      this.store.update((s) => applySnapshot(s, snap));
      return snap;
    });
  }

  /** Place at a world position using the currently selected diameter. */
  async place(world: [number, number, number]): Promise<Snapshot | null> {
    if (!canPlace(this.store.get())) return null;
    const diameter = this.store.get().diameter;
    return this.mutate(async () => {
      const state = this.store.get();
      const result = await this.api.placeProbe(state.session!.session_id, world, diameter);
      this.store.update((s) =>
        recordPlacement(applySnapshot(s, result), { centre: world, diameter }, result.realized, result.t),
      );
      return result;
    });
  }

  async advance(): Promise<Snapshot | null> {
    if (!canAdvance(this.store.get())) return null;
    return this.mutate(async () => {
      const snap = await this.api.advance(this.store.get().session!.session_id);
      this.store.update((s) => ({ ...applySnapshot(s, snap), ghosts: null }));
      return snap;
    });
  }

  /** Advisory only: fetches ghost probes without touching session state. */
  async suggest(planner: string, seed = 0): Promise<Suggestion | null> {
    const session = this.store.get().session;
    if (!session) return null;
    try {
      const ghost = await this.api.suggest(session.session_id, planner, seed);
      this.store.update((s) => ({
        ...s,
        ghosts: ghost,
        overlays: { ...s.overlays, suggestions: true },
        error: null,
      }));
      return ghost;
    } catch (err) {
      return this.fail(err);
    }
  }

  /** Commit the current suggestion as individual placements, in probe order. */
  async acceptSuggestion(): Promise<number> {
    const ghosts = this.store.get().ghosts;
    if (!ghosts) return 0;
    let placedCount = 0;
    for (const probe of ghosts.probes) {
      if (!canPlace(this.store.get())) break;
      this.store.update((s) => ({ ...s, diameter: probe.diameter }));
      const result = await this.place(probe.centre);
      if (result === null) break;
      placedCount += 1;
    }
    this.store.update((s) => ({ ...s, ghosts: null }));
    return placedCount;
  }

  clearSuggestion(): void {
    this.store.update((s) => ({ ...s, ghosts: null }));
  }

  async exportSession(): Promise<ExportResult | null> {
    if (!this.store.get().session) return null;
    return this.mutate(() => this.api.exportSession(this.store.get().session!.session_id));
  }
}
