// Client-side annotation state for one slice/job.
//
// Invariants kept here rather than in the DOM layer:
//  - prompt points are snapped to integer image pixels on entry, so the
//    pixels sent are exactly the pixels the server rasterizes
//  - the stroke buffer is cleared only after the server accepts a POST
//  - the displayed iteration never exceeds the server's latest
// Zoom and pan are display-only; converting back to image coordinates and
// snapping happens before anything enters the session.

import type { JobDoc, JobState, Point, PromptPayload } from "./api.js";

export type Tool = "box" | "prompt" | "pan";

export interface OverlayToggles {
  contour: boolean;
  g: boolean;
  beta: boolean;
  mask: boolean;
}

// [r0, c0, r1, c1] with r0 < r1 and c0 < c1
export type Box = [number, number, number, number];

export interface ViewTransform {
  zoom: number;
  panX: number;
  panY: number;
}

// Pixel (r, c) occupies the zoom-by-zoom square whose center these two maps
// agree on, so a click anywhere inside a displayed pixel snaps back to it.
export function imageToCanvas(p: Point, view: ViewTransform): [number, number] {
  return [(p[1] + 0.5) * view.zoom + view.panX, (p[0] + 0.5) * view.zoom + view.panY];
}

export function canvasToImage(x: number, y: number, view: ViewTransform): [number, number] {
  return [(y - view.panY) / view.zoom - 0.5, (x - view.panX) / view.zoom - 0.5];
}

export function snapToPixel(r: number, c: number, rows: number, cols: number): Point {
  const clamp = (v: number, hi: number) => Math.min(hi - 1, Math.max(0, Math.round(v)));
  return [clamp(r, rows), clamp(c, cols)];
}

const PROMPT_EDIT_STATES: ReadonlySet<JobState> = new Set([
  "created",
  "fields_ready",
  "paused",
]);

export class AnnotationSession {
  sliceId: string | null = null;
  jobId: string | null = null;
  jobState: JobState | null = null;
  latestIteration = 0;
  displayedIteration = 0;
  followLatest = true;
  fieldVersion = 0;
  convergenceIteration: number | null = null;
  lastError: string | null = null;

  rows = 0;
  cols = 0;

  tool: Tool = "pan";
  overlays: OverlayToggles = { contour: true, g: false, beta: false, mask: false };

  box: Box | null = null;
  private boxAnchor: Point | null = null;

  // strokes the server has accepted, finished-but-unposted strokes, and
  // the stroke currently being drawn
  postedStrokes: Point[][] = [];
  strokeBuffer: Point[][] = [];
  activeStroke: Point[] = [];

  setSlice(sliceId: string, rows: number, cols: number): void {
    this.sliceId = sliceId;
    this.rows = rows;
    this.cols = cols;
    this.jobId = null;
    this.jobState = null;
    this.latestIteration = 0;
    this.displayedIteration = 0;
    this.followLatest = true;
    this.fieldVersion = 0;
    this.convergenceIteration = null;
    this.box = null;
    this.boxAnchor = null;
    this.postedStrokes = [];
    this.strokeBuffer = [];
    this.activeStroke = [];
  }

  setTool(tool: Tool): void {
    this.tool = tool;
  }

  // --- init box -----------------------------------------------------------

  beginBox(r: number, c: number): void {
    this.boxAnchor = snapToPixel(r, c, this.rows, this.cols);
    this.box = null;
  }

  dragBox(r: number, c: number): void {
    if (this.boxAnchor === null) return;
    const p = snapToPixel(r, c, this.rows, this.cols);
    const [ar, ac] = this.boxAnchor;
    this.box = [
      Math.min(ar, p[0]),
      Math.min(ac, p[1]),
      Math.max(ar, p[0]),
      Math.max(ac, p[1]),
    ];
  }

  endBox(): Box | null {
    this.boxAnchor = null;
    if (this.box !== null && (this.box[0] >= this.box[2] || this.box[1] >= this.box[3])) {
      this.box = null; // degenerate drag, nothing to keep
    }
    return this.box;
  }

  // --- prompt strokes ------------------------------------------------------

  addPromptPoint(r: number, c: number): Point {
    const p = snapToPixel(r, c, this.rows, this.cols);
    const last = this.activeStroke[this.activeStroke.length - 1];
    if (last === undefined || last[0] !== p[0] || last[1] !== p[1]) {
      this.activeStroke.push(p);
    }
    return p;
  }

  endStroke(): void {
    if (this.activeStroke.length > 0) {
      this.strokeBuffer.push(this.activeStroke);
      this.activeStroke = [];
    }
  }

  discardUnposted(): void {
    this.strokeBuffer = [];
    this.activeStroke = [];
  }

  hasUnpostedStrokes(): boolean {
    return this.strokeBuffer.length > 0 || this.activeStroke.length > 0;
  }

  // The service replaces the whole prompt set on POST, so the payload is
  // everything it already has plus everything pending locally.
  promptPayload(): PromptPayload {
    const strokes = [...this.postedStrokes, ...this.strokeBuffer];
    if (this.activeStroke.length > 0) strokes.push(this.activeStroke);
    return { strokes };
  }

  onPromptsAccepted(fieldVersion: number, state: JobState): void {
    this.postedStrokes = this.promptPayload().strokes;
    this.strokeBuffer = [];
    this.activeStroke = [];
    this.fieldVersion = fieldVersion;
    this.jobState = state;
  }

  canEditPrompts(): boolean {
    return this.jobState !== null && PROMPT_EDIT_STATES.has(this.jobState);
  }

  // --- job state ----------------------------------------------------------

  applyJob(doc: JobDoc): void {
    this.jobId = doc.id;
    this.jobState = doc.state;
    this.latestIteration = doc.iteration;
    this.fieldVersion = doc.field_version;
    this.convergenceIteration = doc.convergence_iteration;
    this.lastError = doc.error;
    if (this.followLatest) {
      this.displayedIteration = doc.iteration;
    } else {
      this.displayedIteration = Math.min(this.displayedIteration, doc.iteration);
    }
  }

  requestIteration(n: number): number {
    this.followLatest = false;
    this.displayedIteration = Math.max(0, Math.min(Math.round(n), this.latestIteration));
    return this.displayedIteration;
  }

  resumeFollowing(): void {
    this.followLatest = true;
    this.displayedIteration = this.latestIteration;
  }
}
