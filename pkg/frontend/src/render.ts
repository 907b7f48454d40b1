/** Pure scene construction for the birds-eye view.
 *
 * `renderScan` maps (ViewState, scan payload) to a plain scene description
 * with no hidden inputs, so the same state and payload always produce the
 * identical scene. A canvas layer draws the description; tests compare it
 * structurally.
 */

import { ScanPayload, TrackStatus } from "./types";
import { ViewState, unitKey } from "./viewState";

export interface ScenePoint {
  x: number;
  y: number;
}

export interface SceneDetection extends ScenePoint {
  detId: number;
  /** Range rate mapped to [0, 1] for visual encoding (0.5 = stationary). */
  shade: number;
}

export interface SceneEllipse extends ScenePoint {
  trackId: number;
  status: TrackStatus;
  length: number;
  width: number;
  angle: number;
  label: string;
  color: string;
  selected: boolean;
  grouped: boolean;
}

export interface SceneLine {
  trackId: number;
  detId: number;
  from: ScenePoint;
  to: ScenePoint;
}

export interface SceneObject extends ScenePoint {
  objectId: number;
  alpha: number;
  length: number | null;
  width: number | null;
}

export interface Scene {
  k: number;
  ego: ScenePoint & { yaw: number };
  detections: SceneDetection[];
  tracks: SceneEllipse[];
  assignmentLines: SceneLine[];
  objects: SceneObject[];
}

export const STATUS_COLORS: Record<TrackStatus, string> = {
  initialized: "#9e9e9e",
  unconfident: "#ffb300",
  verified: "#2e7d32",
  deleted: "#b71c1c",
};

/** Clamp |vr| <= 10 m/s onto [0, 1]; approaching is dark, receding bright. */
export function rangeRateShade(vr: number): number {
  const clamped = Math.max(-10, Math.min(10, vr));
  return (clamped + 10) / 20;
}

export function renderScan(view: ViewState, scan: ScanPayload): Scene {
  const scene: Scene = {
    k: scan.k,
    ego: { x: scan.ego.x, y: scan.ego.y, yaw: scan.ego.yaw },
    detections: [],
    tracks: [],
    assignmentLines: [],
    objects: [],
  };

  for (const det of scan.detections) {
    scene.detections.push({
      detId: det.id,
      x: det.x,
      y: det.y,
      shade: rangeRateShade(det.vr),
    });
  }

  const visibleCentroids = new Map<number, ScenePoint>();
  for (const track of scan.tracks ?? []) {
    if (!view.statusVisible[track.status]) continue;
    const selected = view.draft.selected.includes(track.track_id);
    const grouped = view.draft.groups.some((g) => g.includes(track.track_id));
    const cls = view.draft.classes[unitKey(view.draft, track.track_id)];
    scene.tracks.push({
      trackId: track.track_id,
      status: track.status,
      x: track.x,
      y: track.y,
      length: track.length,
      width: track.width,
      angle: track.angle,
      label: cls === undefined ? `#${track.track_id}` : `#${track.track_id} ${cls}`,
      color: STATUS_COLORS[track.status],
      selected,
      grouped,
    });
    visibleCentroids.set(track.track_id, { x: track.x, y: track.y });
  }

  const detById = new Map(scan.detections.map((d) => [d.id, d]));
  for (const [tid, detIds] of Object.entries(scan.assignments ?? {})) {
    const centroid = visibleCentroids.get(Number(tid));
    if (!centroid) continue; // track hidden by the status filter
    for (const detId of detIds) {
      const det = detById.get(detId);
      if (!det) continue;
      scene.assignmentLines.push({
        trackId: Number(tid),
        detId,
        from: { x: det.x, y: det.y },
        to: { x: centroid.x, y: centroid.y },
      });
    }
  }

  for (const obj of scan.objects ?? []) {
    scene.objects.push({
      objectId: obj.object_id,
      x: obj.x,
      y: obj.y,
      alpha: obj.alpha,
      length: obj.length,
      width: obj.width,
    });
  }

  return scene;
}
