/** Undo/redo over the supervision draft.
 *
 * Only draft edits enter the history; playback, camera and filter changes
 * pass through untracked so scrubbing never pollutes undo.
 */

import { DecisionDraft, EditAction, ViewState, editDecision } from "./viewState";

export class DecisionStore {
  private past: DecisionDraft[] = [];
  private future: DecisionDraft[] = [];

  constructor(private current: ViewState) {}

  get view(): ViewState {
    return this.current;
  }

  /** Apply a draft edit; throws EditRejection and leaves state untouched. */
  apply(action: EditAction): ViewState {
    const next = editDecision(this.current, action);
    if (next.draft !== this.current.draft) {
      this.past.push(this.current.draft);
      this.future = [];
    }
    this.current = next;
    return next;
  }

  /** Replace view fields that are not part of the draft (seek, camera, ...). */
  update(fn: (view: ViewState) => ViewState): ViewState {
    const next = fn(this.current);
    if (next.draft !== this.current.draft) {
      throw new Error("update() must not change the draft; use apply()");
    }
    this.current = next;
    return next;
  }

  get canUndo(): boolean {
    return this.past.length > 0;
  }

  get canRedo(): boolean {
    return this.future.length > 0;
  }

  undo(): ViewState {
    const previous = this.past.pop();
    if (previous !== undefined) {
      this.future.push(this.current.draft);
      this.current = { ...this.current, draft: previous };
    }
    return this.current;
  }

  redo(): ViewState {
    const next = this.future.pop();
    if (next !== undefined) {
      this.past.push(this.current.draft);
      this.current = { ...this.current, draft: next };
    }
    return this.current;
  }
}
