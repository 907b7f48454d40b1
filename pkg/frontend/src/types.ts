/** Wire-format schemas for the session HTTP API and the supervision decision.
 *
 * Every payload coming off the network is validated with zod before it
 * reaches rendering or editing code; a schema mismatch surfaces as a
 * single, user-visible error instead of undefined behaviour downstream.
 */

import { z } from "zod";

export const TRACK_STATUSES = [
  "initialized",
  "unconfident",
  "verified",
  "deleted",
] as const;

export type TrackStatus = (typeof TRACK_STATUSES)[number];

export const OBJECT_CLASSES = [
  "Pedestrian",
  "PedestrianGroup",
  "Cyclist",
  "Car",
  "Truck",
  "Other",
] as const;

export type ObjectClass = (typeof OBJECT_CLASSES)[number];

const finite = z.number().finite();

export const EgoSchema = z.object({
  x: finite,
  y: finite,
  yaw: finite,
  v: finite,
  yaw_rate: finite,
});

export const DetectionSchema = z.object({
  id: z.number().int().nonnegative(),
  x: finite,
  y: finite,
  vr: finite,
});

export const TrackSchema = z.object({
  track_id: z.number().int().positive(),
  status: z.enum(TRACK_STATUSES),
  x: finite,
  y: finite,
  vx: finite,
  vy: finite,
  length: finite.nonnegative(),
  width: finite.nonnegative(),
  angle: finite,
  birth_k: z.number().int().nonnegative(),
  last_k: z.number().int().nonnegative(),
});

export const ObjectStateSchema = z.object({
  object_id: z.number().int(),
  x: finite,
  y: finite,
  alpha: finite,
  length: finite.nullable(),
  width: finite.nullable(),
});

export const AnnotationSchema = z.object({
  det_id: z.number().int().nonnegative(),
  object_id: z.number().int(),
  rho: finite,
  region: z.enum(["core", "border"]),
});

export const ScanSchema = z.object({
  k: z.number().int().nonnegative(),
  t: finite,
  ego: EgoSchema,
  detections: z.array(DetectionSchema),
  tracks: z.array(TrackSchema).optional(),
  assignments: z.record(z.string(), z.array(z.number().int())).optional(),
  objects: z.array(ObjectStateSchema).optional(),
  annotations: z.array(AnnotationSchema).optional(),
});

export const ScanWindowSchema = z.object({
  k0: z.number().int().nonnegative(),
  k1: z.number().int().positive(),
  scans: z.array(ScanSchema),
});

export const StageStatusSchema = z.object({
  state: z.enum(["idle", "running", "complete", "failed"]),
  error: z.string().nullable(),
  artifact_complete: z.boolean(),
});

export const ManifestSchema = z.object({
  manifest: z.object({ session_id: z.string() }).passthrough(),
  n_scans: z.number().int().nonnegative(),
  stages: z.record(z.string(), z.boolean()),
});

export const TrackHistorySchema = z.object({
  track_id: z.number().int().positive(),
  history: z.array(TrackSchema.extend({ k: z.number().int().nonnegative() })),
});

export const ReportSchema = z.object({
  rows: z.array(z.record(z.string(), z.unknown())),
  table: z.string(),
});

export type Ego = z.infer<typeof EgoSchema>;
export type Detection = z.infer<typeof DetectionSchema>;
export type Track = z.infer<typeof TrackSchema>;
export type ScanPayload = z.infer<typeof ScanSchema>;
export type ScanWindow = z.infer<typeof ScanWindowSchema>;
export type StageStatus = z.infer<typeof StageStatusSchema>;
export type ManifestPayload = z.infer<typeof ManifestSchema>;
export type TrackHistory = z.infer<typeof TrackHistorySchema>;
export type ReportPayload = z.infer<typeof ReportSchema>;

/** Decision body as the session service expects it. */
export interface DecisionPayload {
  accepted: number[];
  merge_groups: number[][];
  classes: Record<string, ObjectClass>;
  size_overrides: Record<string, [number, number, number, number]>;
}

/** Raised when a network payload fails schema validation. */
export class SchemaError extends Error {
  constructor(where: string, detail: string) {
    super(`unexpected payload from ${where}: ${detail}`);
    this.name = "SchemaError";
  }
}

export function parseOr<T>(schema: z.ZodType<T>, value: unknown, where: string): T {
  const result = schema.safeParse(value);
  if (!result.success) {
    throw new SchemaError(where, result.error.message);
  }
  return result.data;
}
