/** Review state: playback position, camera, and the supervision draft.
 *
 * The draft is edited exclusively through `editDecision`, which returns a
 * new state or throws an `EditRejection` with a reason the UI can show.
 * Grouped tracks leave the selection set, so "a track is in at most one
 * merge group" holds by construction and is re-checked on every edit.
 */

import { DecisionPayload, ObjectClass, TrackStatus, TRACK_STATUSES } from "./types";

export interface Camera {
  /** World coordinates at the viewport centre, metres. */
  centerX: number;
  centerY: number;
  /** Pixels per metre. */
  zoom: number;
}

export interface DecisionDraft {
  /** Individually accepted true-positive tracks, ascending. */
  selected: readonly number[];
  /** Merge groups; each group ascending, keyed by its smallest id. */
  groups: readonly (readonly number[])[];
  /** Class per unit key (group minimum, or the track id itself). */
  classes: Readonly<Record<number, ObjectClass>>;
}

export interface ViewState {
  scanIndex: number;
  nScans: number;
  playbackSpeed: number;
  playing: boolean;
  camera: Camera;
  /** Which track statuses are visible in the scene. */
  statusVisible: Readonly<Record<TrackStatus, boolean>>;
  /** Track ids present in the loaded session. */
  knownTrackIds: readonly number[];
  draft: DecisionDraft;
}

export type EditAction =
  | { kind: "select"; trackId: number }
  | { kind: "deselect"; trackId: number }
  | { kind: "group"; trackIds: readonly number[] }
  | { kind: "ungroup"; trackId: number }
  | { kind: "assign_class"; trackId: number; cls: ObjectClass };

/** An edit that would violate a draft invariant; the state is unchanged. */
export class EditRejection extends Error {
  constructor(reason: string) {
    super(reason);
    this.name = "EditRejection";
  }
}

export const EMPTY_DRAFT: DecisionDraft = { selected: [], groups: [], classes: {} };

export function createViewState(knownTrackIds: readonly number[], nScans: number): ViewState {
  return {
    scanIndex: 0,
    nScans,
    playbackSpeed: 1,
    playing: false,
    camera: { centerX: 0, centerY: 0, zoom: 8 },
    statusVisible: Object.fromEntries(
      TRACK_STATUSES.map((s) => [s, s !== "deleted"]),
    ) as Record<TrackStatus, boolean>,
    knownTrackIds: [...knownTrackIds].sort((a, b) => a - b),
    draft: EMPTY_DRAFT,
  };
}

function requireKnown(view: ViewState, trackId: number): void {
  if (!view.knownTrackIds.includes(trackId)) {
    throw new EditRejection(`track ${trackId} is not part of this session`);
  }
}

function groupOf(draft: DecisionDraft, trackId: number): readonly number[] | undefined {
  return draft.groups.find((g) => g.includes(trackId));
}

/** The unit a track contributes to: its group's minimum id, or itself. */
export function unitKey(draft: DecisionDraft, trackId: number): number {
  const group = groupOf(draft, trackId);
  return group === undefined ? trackId : Math.min(...group);
}

function sortedUnique(ids: readonly number[]): number[] {
  return [...new Set(ids)].sort((a, b) => a - b);
}

export function editDecision(view: ViewState, action: EditAction): ViewState {
  const draft = view.draft;
  switch (action.kind) {
    case "select": {
      requireKnown(view, action.trackId);
      if (groupOf(draft, action.trackId)) {
        throw new EditRejection(
          `track ${action.trackId} is already part of a merge group`,
        );
      }
      if (draft.selected.includes(action.trackId)) return view;
      return withDraft(view, {
        ...draft,
        selected: sortedUnique([...draft.selected, action.trackId]),
      });
    }
    case "deselect": {
      requireKnown(view, action.trackId);
      if (!draft.selected.includes(action.trackId)) return view;
      const classes = { ...draft.classes };
      delete classes[action.trackId];
      return withDraft(view, {
        ...draft,
        selected: draft.selected.filter((t) => t !== action.trackId),
        classes,
      });
    }
    case "group": {
      const ids = sortedUnique(action.trackIds);
      if (ids.length < 2) {
        throw new EditRejection("a merge group needs at least two tracks");
      }
      for (const id of ids) {
        requireKnown(view, id);
        const existing = groupOf(draft, id);
        if (existing) {
          throw new EditRejection(
            `track ${id} is already in merge group {${existing.join(", ")}}`,
          );
        }
      }
      // the group inherits the class of its lowest member that has one
      const classes = { ...draft.classes };
      const key = ids[0]!;
      const inherited = ids.map((t) => classes[t]).find((c) => c !== undefined);
      for (const id of ids) delete classes[id];
      if (inherited !== undefined) classes[key] = inherited;
      return withDraft(view, {
        selected: draft.selected.filter((t) => !ids.includes(t)),
        groups: [...draft.groups, ids],
        classes,
      });
    }
    case "ungroup": {
      requireKnown(view, action.trackId);
      const group = groupOf(draft, action.trackId);
      if (!group) {
        throw new EditRejection(`track ${action.trackId} is not in a merge group`);
      }
      const classes = { ...draft.classes };
      delete classes[Math.min(...group)];
      // dissolved members return to the selection set for further editing
      return withDraft(view, {
        selected: sortedUnique([...draft.selected, ...group]),
        groups: draft.groups.filter((g) => g !== group),
        classes,
      });
    }
    case "assign_class": {
      requireKnown(view, action.trackId);
      if (
        !draft.selected.includes(action.trackId) &&
        !groupOf(draft, action.trackId)
      ) {
        throw new EditRejection(
          `track ${action.trackId} must be selected or grouped before it gets a class`,
        );
      }
      const key = unitKey(draft, action.trackId);
      return withDraft(view, {
        ...draft,
        classes: { ...draft.classes, [key]: action.cls },
      });
    }
  }
}

function withDraft(view: ViewState, draft: DecisionDraft): ViewState {
  return { ...view, draft };
}

// --- playback / camera updates (not part of the undo history) --------------

export function seekScan(view: ViewState, scanIndex: number): ViewState {
  const clamped = Math.max(0, Math.min(view.nScans - 1, Math.trunc(scanIndex)));
  return { ...view, scanIndex: clamped };
}

export function setStatusVisible(
  view: ViewState,
  status: TrackStatus,
  visible: boolean,
): ViewState {
  return { ...view, statusVisible: { ...view.statusVisible, [status]: visible } };
}

export function panCamera(view: ViewState, dxPx: number, dyPx: number): ViewState {
  const { camera } = view;
  return {
    ...view,
    camera: {
      ...camera,
      centerX: camera.centerX - dxPx / camera.zoom,
      centerY: camera.centerY + dyPx / camera.zoom,
    },
  };
}

export function zoomCamera(view: ViewState, factor: number): ViewState {
  const zoom = Math.max(0.5, Math.min(200, view.camera.zoom * factor));
  return { ...view, camera: { ...view.camera, zoom } };
}

// --- draft validation and serialization ------------------------------------

/** Reasons the draft cannot be submitted yet; empty means it is ready. */
export function draftProblems(draft: DecisionDraft): string[] {
  const problems: string[] = [];
  if (draft.selected.length === 0 && draft.groups.length === 0) {
    problems.push("no tracks have been accepted");
  }
  for (const id of draft.selected) {
    if (draft.classes[id] === undefined) {
      problems.push(`track ${id} has no class assigned`);
    }
  }
  for (const group of draft.groups) {
    const key = Math.min(...group);
    if (draft.classes[key] === undefined) {
      problems.push(`merge group {${group.join(", ")}} has no class assigned`);
    }
  }
  return problems;
}

/** The exact request body the session service expects. */
export function serializeDecision(draft: DecisionDraft): DecisionPayload {
  const classes: Record<string, ObjectClass> = {};
  for (const key of Object.keys(draft.classes)
    .map(Number)
    .sort((a, b) => a - b)) {
    classes[String(key)] = draft.classes[key]!;
  }
  return {
    accepted: [...draft.selected],
    merge_groups: draft.groups.map((g) => [...g]),
    classes,
    size_overrides: {},
  };
}
