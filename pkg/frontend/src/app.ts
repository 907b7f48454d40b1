/** Browser shell: timeline scrubber, birds-eye canvas, draft editing panel.
 *
 * All server traffic goes through the injected SessionApi; all draft
 * mutations go through one DecisionStore so undo/redo covers every edit.
 */

import { ApiError, HttpSessionApi, SessionApi } from "./api";
import { DecisionStore } from "./history";
import { Scene, renderScan } from "./render";
import { ObjectClass, OBJECT_CLASSES, SchemaError, ScanPayload, TRACK_STATUSES } from "./types";
import {
  draftProblems,
  createViewState,
  panCamera,
  seekScan,
  serializeDecision,
  setStatusVisible,
  zoomCamera,
} from "./viewState";

const WINDOW_SIZE = 25;

export class App {
  private store!: DecisionStore;
  private scans = new Map<number, ScanPayload>();
  private nScans = 0;
  private playTimer: number | null = null;
  private pendingFetch: Promise<void> | null = null;

  private canvas: HTMLCanvasElement;
  private scrubber: HTMLInputElement;
  private banner: HTMLElement;
  private sidebar: HTMLElement;

  constructor(
    private api: SessionApi,
    private root: HTMLElement,
  ) {
    this.root.innerHTML = `
      <div class="banner" hidden></div>
      <canvas width="960" height="640"></canvas>
      <input type="range" min="0" value="0" step="1" class="scrubber">
      <div class="sidebar"></div>`;
    this.banner = this.root.querySelector(".banner")!;
    this.canvas = this.root.querySelector("canvas")!;
    this.scrubber = this.root.querySelector(".scrubber")!;
    this.sidebar = this.root.querySelector(".sidebar")!;
  }

  async start(): Promise<void> {
    const manifest = await this.api.manifest();
    this.nScans = manifest.n_scans;
    this.scrubber.max = String(Math.max(0, this.nScans - 1));
    await this.ensureWindow(0);

    const trackIds = new Set<number>();
    for (const scan of this.scans.values()) {
      for (const track of scan.tracks ?? []) trackIds.add(track.track_id);
    }
    this.store = new DecisionStore(createViewState([...trackIds], this.nScans));
    this.bindInputs();
    this.redraw();
  }

  private bindInputs(): void {
    this.scrubber.addEventListener("input", () => {
      void this.seek(Number(this.scrubber.value));
    });
    this.canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.store.update((v) => zoomCamera(v, e.deltaY < 0 ? 1.15 : 1 / 1.15));
      this.redraw();
    });
    let dragging = false;
    this.canvas.addEventListener("mousedown", () => (dragging = true));
    window.addEventListener("mouseup", () => (dragging = false));
    this.canvas.addEventListener("mousemove", (e) => {
      if (!dragging) return;
      this.store.update((v) => panCamera(v, e.movementX, e.movementY));
      this.redraw();
    });
    window.addEventListener("keydown", (e) => {
      if (e.key === " ") this.togglePlay();
      else if (e.key === "z" && (e.ctrlKey || e.metaKey) && e.shiftKey) this.redo();
      else if (e.key === "z" && (e.ctrlKey || e.metaKey)) this.undo();
      else if (e.key === "ArrowRight") void this.seek(this.store.view.scanIndex + 1);
      else if (e.key === "ArrowLeft") void this.seek(this.store.view.scanIndex - 1);
    });
  }

  private async seek(scanIndex: number): Promise<void> {
    this.store.update((v) => seekScan(v, scanIndex));
    await this.ensureWindow(this.store.view.scanIndex);
    this.redraw();
  }

  private togglePlay(): void {
    if (this.playTimer !== null) {
      window.clearInterval(this.playTimer);
      this.playTimer = null;
      return;
    }
    const view = this.store.view;
    const periodMs = 100 / Math.max(0.1, view.playbackSpeed);
    this.playTimer = window.setInterval(() => {
      const next = this.store.view.scanIndex + 1;
      if (next >= this.nScans) this.togglePlay();
      else void this.seek(next);
    }, periodMs);
  }

  undo(): void {
    this.store.undo();
    this.redraw();
  }

  redo(): void {
    this.store.redo();
    this.redraw();
  }

  /** Fetch the scan window around k once; windows are immutable per stage. */
  private async ensureWindow(k: number): Promise<void> {
    if (this.scans.has(k)) return;
    const k0 = Math.max(0, k - 2);
    const k1 = Math.min(this.nScans, k0 + WINDOW_SIZE);
    if (this.pendingFetch) await this.pendingFetch;
    this.pendingFetch = this.api
      .scanWindow(k0, k1)
      .then((window) => {
        for (const scan of window.scans) this.scans.set(scan.k, scan);
      })
      .catch((err: unknown) => this.showError(err))
      .finally(() => (this.pendingFetch = null));
    await this.pendingFetch;
  }

  private showError(err: unknown): void {
    const text =
      err instanceof SchemaError || err instanceof ApiError
        ? err.message
        : `unexpected error: ${String(err)}`;
    this.banner.textContent = text;
    this.banner.hidden = false;
  }

  private redraw(): void {
    const view = this.store.view;
    const scan = this.scans.get(view.scanIndex);
    if (!scan) return;
    let scene: Scene;
    try {
      scene = renderScan(view, scan);
    } catch (err) {
      this.showError(err);
      return;
    }
    this.banner.hidden = true;
    this.drawScene(scene);
    this.renderSidebar();
    this.scrubber.value = String(view.scanIndex);
  }

  private drawScene(scene: Scene): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { camera } = this.store.view;
    const toPx = (x: number, y: number): [number, number] => [
      this.canvas.width / 2 + (x - camera.centerX) * camera.zoom,
      this.canvas.height / 2 - (y - camera.centerY) * camera.zoom,
    ];

    ctx.fillStyle = "#101418";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);

    ctx.strokeStyle = "#4dd0e1";
    const [ex, ey] = toPx(scene.ego.x, scene.ego.y);
    ctx.strokeRect(ex - 4, ey - 4, 8, 8);

    ctx.strokeStyle = "#546e7a";
    for (const line of scene.assignmentLines) {
      ctx.beginPath();
      ctx.moveTo(...toPx(line.from.x, line.from.y));
      ctx.lineTo(...toPx(line.to.x, line.to.y));
      ctx.stroke();
    }

    for (const det of scene.detections) {
      const level = Math.round(64 + det.shade * 160);
      ctx.fillStyle = `rgb(${level}, ${level}, 255)`;
      const [dx, dy] = toPx(det.x, det.y);
      ctx.beginPath();
      ctx.arc(dx, dy, 2.5, 0, 2 * Math.PI);
      ctx.fill();
    }

    for (const track of scene.tracks) {
      const [tx, ty] = toPx(track.x, track.y);
      ctx.save();
      ctx.translate(tx, ty);
      ctx.rotate(-track.angle);
      ctx.strokeStyle = track.color;
      ctx.lineWidth = track.selected || track.grouped ? 3 : 1;
      ctx.beginPath();
      ctx.ellipse(
        0,
        0,
        (Math.max(track.length, 0.4) / 2) * camera.zoom,
        (Math.max(track.width, 0.4) / 2) * camera.zoom,
        0,
        0,
        2 * Math.PI,
      );
      ctx.stroke();
      ctx.restore();
      ctx.fillStyle = track.color;
      ctx.font = "12px sans-serif";
      ctx.fillText(track.label, tx + 6, ty - 6);
    }

    ctx.strokeStyle = "#f5f5f5";
    for (const obj of scene.objects) {
      const [ox, oy] = toPx(obj.x, obj.y);
      ctx.save();
      ctx.translate(ox, oy);
      ctx.rotate(-obj.alpha);
      ctx.strokeRect(
        (-(obj.length ?? 1) / 2) * camera.zoom,
        (-(obj.width ?? 1) / 2) * camera.zoom,
        (obj.length ?? 1) * camera.zoom,
        (obj.width ?? 1) * camera.zoom,
      );
      ctx.restore();
    }
  }

  private renderSidebar(): void {
    const view = this.store.view;
    const problems = draftProblems(view.draft);
    const filters = TRACK_STATUSES.map(
      (s) =>
        `<label><input type="checkbox" data-status="${s}" ${
          view.statusVisible[s] ? "checked" : ""
        }> ${s}</label>`,
    ).join("");
    const groups = view.draft.groups
      .map((g) => `<li>{${g.join(", ")}}</li>`)
      .join("");
    this.sidebar.innerHTML = `
      <section>${filters}</section>
      <section>selected: ${view.draft.selected.join(", ") || "none"}</section>
      <section><ul>${groups}</ul></section>
      <section class="problems">${problems.join("<br>")}</section>
      <button class="submit" ${problems.length ? "disabled" : ""}>submit decision</button>
      <button class="finalize" disabled>run finalization</button>`;
    for (const box of this.sidebar.querySelectorAll<HTMLInputElement>("[data-status]")) {
      box.addEventListener("change", () => {
        const status = box.dataset.status as (typeof TRACK_STATUSES)[number];
        this.store.update((v) => setStatusVisible(v, status, box.checked));
        this.redraw();
      });
    }
    this.sidebar.querySelector(".submit")?.addEventListener("click", () => {
      void this.submit();
    });
    this.sidebar.querySelector(".finalize")?.addEventListener("click", () => {
      void this.api.launchStage("finalize").catch((err: unknown) => this.showError(err));
    });
  }

  selectTrack(trackId: number): void {
    this.store.apply({ kind: "select", trackId });
    this.redraw();
  }

  groupSelection(): void {
    this.store.apply({ kind: "group", trackIds: this.store.view.draft.selected });
    this.redraw();
  }

  assignClass(trackId: number, cls: ObjectClass): void {
    this.store.apply({ kind: "assign_class", trackId, cls });
    this.redraw();
  }

  async submit(): Promise<void> {
    const problems = draftProblems(this.store.view.draft);
    if (problems.length > 0) {
      this.showError(new Error(problems.join("; ")));
      return;
    }
    try {
      await this.api.submitDecision(serializeDecision(this.store.view.draft));
    } catch (err) {
      this.showError(err);
      return;
    }
    const finalize = this.sidebar.querySelector<HTMLButtonElement>(".finalize");
    if (finalize) finalize.disabled = false;
  }
}

export function mount(root: HTMLElement, baseUrl: string): App {
  const app = new App(new HttpSessionApi(baseUrl), root);
  void app.start();
  return app;
}

export { OBJECT_CLASSES };
