// Page wiring: one slice, one job, one canvas. All state lives in
// AnnotationSession; all numbers come from the service.

import { ApiError, FigacClient } from "./api.js";
import type { JobState } from "./api.js";
import { SliceView } from "./canvas.js";
import { Poller } from "./poll.js";
import { AnnotationSession, canvasToImage } from "./session.js";
import type { Tool } from "./session.js";

const DEFAULT_SERVER = "http://127.0.0.1:8008";
const IDLE_STATES: ReadonlySet<string> = new Set(["paused", "converged", "failed"]);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

const serverInput = el<HTMLInputElement>("server");
const uploadInput = el<HTMLInputElement>("upload");
const alphaInput = el<HTMLInputElement>("alpha");
const stepInput = el<HTMLInputElement>("step");
const modeSelect = el<HTMLSelectElement>("mode");
const itersInput = el<HTMLInputElement>("iters");
const iterView = el<HTMLInputElement>("iter-view");
const followBox = el<HTMLInputElement>("follow");
const createBtn = el<HTMLButtonElement>("create-job");
const runBtn = el<HTMLButtonElement>("run");
const pauseBtn = el<HTMLButtonElement>("pause");
const applyBtn = el<HTMLButtonElement>("apply-strokes");
const discardBtn = el<HTMLButtonElement>("discard-strokes");
const exportLink = el<HTMLAnchorElement>("export");
const statusBar = el<HTMLDivElement>("status");
const errorBar = el<HTMLDivElement>("error");
const canvas = el<HTMLCanvasElement>("view");

const session = new AnnotationSession();
const view = new SliceView(canvas);
let client = new FigacClient(serverInput.value || DEFAULT_SERVER);
let lastMaskState: JobState | null = null;
let lastFieldVersion = 0;

serverInput.value = DEFAULT_SERVER;
serverInput.addEventListener("change", () => {
  client = new FigacClient(serverInput.value.replace(/\/+$/, ""));
});

// --- errors ---------------------------------------------------------------

function clearError(): void {
  errorBar.textContent = "";
  for (const node of document.querySelectorAll(".invalid")) node.classList.remove("invalid");
}

function showError(err: unknown): void {
  if (err instanceof ApiError) {
    errorBar.textContent = err.message;
    if (err.field !== null) {
      const owner = document.querySelector(`[data-field="${err.field}"]`);
      if (owner !== null) owner.classList.add("invalid");
    }
  } else {
    errorBar.textContent = err instanceof Error ? err.message : String(err);
  }
}

async function guarded(action: () => Promise<void>): Promise<void> {
  clearError();
  try {
    await action();
  } catch (err) {
    showError(err);
  }
  refresh();
}

// --- rendering ------------------------------------------------------------

async function bitmapFromPng(bytes: Uint8Array<ArrayBuffer>): Promise<ImageBitmap> {
  return createImageBitmap(new Blob([bytes], { type: "image/png" }));
}

async function reloadFieldLayers(): Promise<void> {
  if (session.jobId === null) return;
  view.setLayer("g", await bitmapFromPng(await client.fieldPng(session.jobId, "g")));
  try {
    view.setLayer("beta", await bitmapFromPng(await client.fieldPng(session.jobId, "beta")));
  } catch {
    view.setLayer("beta", null); // classical mode has no beta
  }
  lastFieldVersion = session.fieldVersion;
}

async function reloadMask(): Promise<void> {
  if (session.jobId === null) return;
  view.setLayer("mask", await bitmapFromPng(await client.maskPng(session.jobId)));
}

function refresh(): void {
  const bits = [
    session.jobState === null ? "no job" : `state ${session.jobState}`,
    `iter ${session.displayedIteration}/${session.latestIteration}`,
    `fields v${session.fieldVersion}`,
  ];
  if (session.convergenceIteration !== null) bits.push(`converged at ${session.convergenceIteration}`);
  if (!poller.online) bits.push("offline, retrying");
  if (session.lastError !== null) bits.push(`server error: ${session.lastError}`);
  statusBar.textContent = bits.join(" | ");
  view.render(session);
}

// --- polling --------------------------------------------------------------

const poller = new Poller(async () => {
  if (session.jobId === null) return;
  const doc = await client.getJob(session.jobId);
  const wasState = lastMaskState;
  session.applyJob(doc);
  if (session.followLatest) {
    const snap = await client.contour(session.jobId);
    view.setContour(snap.polylines);
  }
  if (session.fieldVersion !== lastFieldVersion) await reloadFieldLayers();
  if (IDLE_STATES.has(doc.state) && wasState !== doc.state) await reloadMask();
  lastMaskState = doc.state;
  refresh();
});

// --- upload and job creation ----------------------------------------------

uploadInput.addEventListener("change", () =>
  guarded(async () => {
    const file = uploadInput.files?.[0];
    if (file === undefined) return;
    const bytes = new Uint8Array(await file.arrayBuffer());
    const sliceId = await client.uploadSlice(bytes, file.name);
    const bmp = await bitmapFromPng(bytes);
    session.setSlice(sliceId, bmp.height, bmp.width);
    poller.stop();
    view.setSlice(bmp);
    view.setLayer("g", null);
    view.setLayer("beta", null);
    view.setLayer("mask", null);
    view.setContour([]);
    view.fitTo(bmp.height, bmp.width);
  }),
);

createBtn.addEventListener("click", () =>
  guarded(async () => {
    if (session.sliceId === null) throw new Error("upload a slice first");
    const config: Record<string, unknown> = {
      mode: modeSelect.value,
      evolution: {
        alpha: Number(alphaInput.value),
        step_size: Number(stepInput.value),
      },
    };
    if (session.box !== null) config.init_box = session.box;
    const doc = await client.createJob(session.sliceId, config);
    session.applyJob(doc);
    exportLink.href = client.maskUrl(doc.id);
    lastMaskState = doc.state;
    await reloadFieldLayers();
    const snap = await client.contour(doc.id, 0);
    view.setContour(snap.polylines);
    poller.start();
  }),
);

// --- evolution controls -----------------------------------------------------

runBtn.addEventListener("click", () =>
  guarded(async () => {
    if (session.jobId === null) throw new Error("create a job first");
    if (session.hasUnpostedStrokes()) throw new Error("apply or discard pending strokes first");
    await client.run(session.jobId, Number(itersInput.value));
    session.resumeFollowing();
  }),
);

pauseBtn.addEventListener("click", () =>
  guarded(async () => {
    if (session.jobId === null) return;
    session.applyJob(await client.pause(session.jobId));
    await reloadMask();
  }),
);

applyBtn.addEventListener("click", () =>
  guarded(async () => {
    if (session.jobId === null) throw new Error("create a job first");
    session.endStroke();
    const reply = await client.setPrompts(session.jobId, session.promptPayload());
    session.onPromptsAccepted(reply.field_version, reply.state);
    await reloadFieldLayers();
  }),
);

discardBtn.addEventListener("click", () => {
  session.discardUnposted();
  refresh();
});

followBox.addEventListener("change", () =>
  guarded(async () => {
    if (followBox.checked) {
      session.resumeFollowing();
      return;
    }
    session.requestIteration(Number(iterView.value));
    if (session.jobId !== null) {
      const snap = await client.contour(session.jobId, session.displayedIteration);
      view.setContour(snap.polylines);
    }
  }),
);

iterView.addEventListener("change", () =>
  guarded(async () => {
    if (followBox.checked || session.jobId === null) return;
    const n = session.requestIteration(Number(iterView.value));
    const snap = await client.contour(session.jobId, n);
    view.setContour(snap.polylines);
  }),
);

for (const name of ["contour", "g", "beta", "mask"] as const) {
  el<HTMLInputElement>(`overlay-${name}`).addEventListener("change", (ev) => {
    session.overlays[name] = (ev.target as HTMLInputElement).checked;
    refresh();
  });
}

for (const tool of ["pan", "box", "prompt"] as const) {
  el<HTMLInputElement>(`tool-${tool}`).addEventListener("change", () => {
    session.setTool(tool as Tool);
  });
}

// --- pointer handling -------------------------------------------------------

let dragging = false;
let lastPointer: [number, number] = [0, 0];

function imagePos(ev: PointerEvent): [number, number] {
  const rect = canvas.getBoundingClientRect();
  return canvasToImage(ev.clientX - rect.left, ev.clientY - rect.top, view.view);
}

canvas.addEventListener("pointerdown", (ev) => {
  dragging = true;
  lastPointer = [ev.clientX, ev.clientY];
  canvas.setPointerCapture(ev.pointerId);
  const [r, c] = imagePos(ev);
  if (session.tool === "box") {
    session.beginBox(r, c);
  } else if (session.tool === "prompt") {
    if (session.jobState !== null && !session.canEditPrompts()) {
      showError(new Error(`prompts are locked in state ${session.jobState}, pause first`));
      dragging = false;
      return;
    }
    session.addPromptPoint(r, c);
  }
  refresh();
});

canvas.addEventListener("pointermove", (ev) => {
  if (!dragging) return;
  const [r, c] = imagePos(ev);
  if (session.tool === "pan") {
    view.panBy(ev.clientX - lastPointer[0], ev.clientY - lastPointer[1]);
    lastPointer = [ev.clientX, ev.clientY];
  } else if (session.tool === "box") {
    session.dragBox(r, c);
  } else if (session.tool === "prompt") {
    session.addPromptPoint(r, c);
  }
  refresh();
});

canvas.addEventListener("pointerup", () => {
  if (!dragging) return;
  dragging = false;
  if (session.tool === "box") session.endBox();
  else if (session.tool === "prompt") session.endStroke();
  refresh();
});

canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  const rect = canvas.getBoundingClientRect();
  view.zoomAt(ev.clientX - rect.left, ev.clientY - rect.top, ev.deltaY < 0 ? 1.25 : 0.8);
  refresh();
});

refresh();
