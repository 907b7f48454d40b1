/** Thin HTTP client for the session service.
 *
 * The client is injected wherever server interaction happens so tests can
 * script a whole review session against a fake or a locally spawned
 * service.
 */

import {
  DecisionPayload,
  ManifestPayload,
  ManifestSchema,
  ReportPayload,
  ReportSchema,
  ScanWindow,
  ScanWindowSchema,
  StageStatus,
  StageStatusSchema,
  TrackHistory,
  TrackHistorySchema,
  parseOr,
} from "./types";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly reason: string,
  ) {
    super(`HTTP ${status}: ${reason}`);
    this.name = "ApiError";
  }
}

export interface SessionApi {
  manifest(): Promise<ManifestPayload>;
  scanWindow(k0: number, k1: number): Promise<ScanWindow>;
  trackHistory(trackId: number): Promise<TrackHistory>;
  submitDecision(decision: DecisionPayload): Promise<void>;
  launchStage(stage: string): Promise<void>;
  stageStatus(stage: string): Promise<StageStatus>;
  report(): Promise<ReportPayload>;
}

export class HttpSessionApi implements SessionApi {
  constructor(readonly baseUrl: string) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const response = await fetch(this.baseUrl + path, init);
    if (!response.ok) {
      let reason = response.statusText;
      try {
        const body = (await response.json()) as Record<string, unknown>;
        reason = String(body.reason ?? body.detail ?? reason);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, reason);
    }
    return response.json();
  }

  async manifest(): Promise<ManifestPayload> {
    return parseOr(ManifestSchema, await this.request("/manifest"), "/manifest");
  }

  async scanWindow(k0: number, k1: number): Promise<ScanWindow> {
    const body = await this.request(`/scans?k0=${k0}&k1=${k1}`);
    return parseOr(ScanWindowSchema, body, "/scans");
  }

  async trackHistory(trackId: number): Promise<TrackHistory> {
    const body = await this.request(`/tracks/${trackId}`);
    return parseOr(TrackHistorySchema, body, `/tracks/${trackId}`);
  }

  async submitDecision(decision: DecisionPayload): Promise<void> {
    await this.request("/decision", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(decision),
    });
  }

  async launchStage(stage: string): Promise<void> {
    await this.request(`/stages/${stage}`, { method: "POST" });
  }

  async stageStatus(stage: string): Promise<StageStatus> {
    const body = await this.request(`/stages/${stage}`);
    return parseOr(StageStatusSchema, body, `/stages/${stage}`);
  }

  async report(): Promise<ReportPayload> {
    return parseOr(ReportSchema, await this.request("/report"), "/report");
  }
}
