// Browser slice viewer: scroll a CT volume, set boundaries, place prompts,
// edit the 3D mask, and pick among alternative masks. Talks to the session
// service exclusively through the v1 API.

import { ApiError, VolsegClient, type PointJson, type PromptJson } from "./api.js";
import { decodeRle, type Runs } from "./rle.js";
import { canvasToGrid, downsampleBrush, maskToRgba, MARK_COLOR } from "./overlay.js";
import {
  canPrompt,
  initialState,
  MutationQueue,
  setBoundary,
  validatePrompt,
  clampSlice,
  type EditRecord,
  type Tool,
  type ViewerState,
} from "./state.js";

const LOWRES = 16; // must match the served model's prompt grid
const ZOOM = 6;

const client = new VolsegClient(
  (window as unknown as { VOLSEG_URL?: string }).VOLSEG_URL ?? "http://127.0.0.1:8000",
);

let state: ViewerState = initialState();
const queue = new MutationQueue();
let maskBySlice: Uint8Array[] = [];
let history: EditRecord[] = [];
let initialPrompt: { slice: number; prompt: PromptJson } | null = null;
let brushPixels: Uint8Array | null = null;
let dragStart: { row: number; col: number } | null = null;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const baseCanvas = $("slice") as unknown as HTMLCanvasElement;
const overlayCanvas = $("overlay") as unknown as HTMLCanvasElement;
const toast = $("toast");

function showToast(message: string, isError = true): void {
  toast.textContent = message;
  toast.className = isError ? "toast error" : "toast";
  setTimeout(() => (toast.textContent = ""), 4000);
}

function sliceShape(): { h: number; w: number } {
  const dims = state.dims ?? [1, 64, 64];
  return { h: dims[1], w: dims[2] };
}

async function refreshBase(): Promise<void> {
  if (!state.volumeId) return;
  const { h, w } = sliceShape();
  baseCanvas.width = w * ZOOM;
  baseCanvas.height = h * ZOOM;
  overlayCanvas.width = w * ZOOM;
  overlayCanvas.height = h * ZOOM;
  const img = new Image();
  img.src = client.sliceUrl(state.volumeId, state.slice, state.window);
  await img.decode();
  const ctx = baseCanvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(img, 0, 0, baseCanvas.width, baseCanvas.height);
  $("slice-label").textContent = `slice ${state.slice}${boundaryTag()}`;
}

function boundaryTag(): string {
  const { bottom, top } = state.boundaries;
  if (state.slice === bottom && state.slice === top) return " (bottom+top)";
  if (state.slice === bottom) return " (bottom)";
  if (state.slice === top) return " (top)";
  return "";
}

function drawOverlay(): void {
  const ctx = overlayCanvas.getContext("2d")!;
  ctx.clearRect(0, 0, overlayCanvas.width, overlayCanvas.height);
  const { h, w } = sliceShape();
  const mask = maskBySlice[state.slice];
  if (mask) {
    const rgba = maskToRgba(mask, w, h, state.overlayOpacity);
    const small = new ImageData(rgba, w, h);
    const off = document.createElement("canvas");
    off.width = w;
    off.height = h;
    off.getContext("2d")!.putImageData(small, 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(off, 0, 0, overlayCanvas.width, overlayCanvas.height);
  }
  if (brushPixels && state.tool === "brush") {
    const rgba = maskToRgba(brushPixels, w, h, 0.6, MARK_COLOR);
    const small = new ImageData(rgba, w, h);
    const off = document.createElement("canvas");
    off.width = w;
    off.height = h;
    off.getContext("2d")!.putImageData(small, 0, 0);
    ctx.drawImage(off, 0, 0, overlayCanvas.width, overlayCanvas.height);
  }
}

function renderHistory(): void {
  const list = $("history");
  list.innerHTML = "";
  for (const [i, rec] of history.entries()) {
    const item = document.createElement("li");
    item.textContent = `#${i + 1} slice ${rec.slice} ${rec.point.label} (${rec.point.row}, ${rec.point.col})`;
    list.appendChild(item);
  }
  $("revision-label").textContent = `revision ${state.revision}`;
}

async function refreshMask(): Promise<void> {
  if (!state.sessionId) return;
  const resp = await client.mask(state.sessionId);
  if (resp.revision < state.revision) return; // stale snapshot
  const [, h, w] = [resp.shape[0], resp.shape[1], resp.shape[2]];
  maskBySlice = resp.rle.map((runs: Runs) => decodeRle(runs, h, w));
  state = { ...state, revision: resp.revision };
  drawOverlay();
  renderHistory();
}

function submitMutation(run: () => Promise<number>): void {
  queue
    .submit(run, () => void refreshMask())
    .catch((err) => {
      if (err instanceof ApiError && err.status === 409) {
        showToast("edit conflicted with a newer revision; retry");
      } else {
        showToast(String(err));
      }
    });
}

async function ensureSession(): Promise<string> {
  if (state.sessionId) return state.sessionId;
  const { bottom, top } = state.boundaries;
  const resp = await client.createSession(state.volumeId!, [bottom!, top!], "mask");
  state = { ...state, sessionId: resp.session_id, revision: resp.revision };
  return resp.session_id;
}

function sendPrompt(prompt: PromptJson): void {
  const blocked = canPrompt(state) ?? validatePrompt(prompt);
  if (blocked) {
    showToast(blocked);
    return;
  }
  const slice = state.slice;
  initialPrompt = { slice, prompt };
  history = [];
  submitMutation(async () => {
    const sid = await ensureSession();
    const resp = await client.prompt(sid, slice, prompt);
    return resp.revision;
  });
}

function sendEdit(point: PointJson): void {
  if (!state.sessionId || !initialPrompt) {
    showToast("place an initial prompt before editing");
    return;
  }
  const slice = state.slice;
  history.push({ slice, point });
  submitMutation(async () => {
    const resp = await client.edit(state.sessionId!, slice, point, state.revision);
    return resp.revision;
  });
}

async function undoLastEdit(): Promise<void> {
  // replay semantics: fresh session, original prompt, all edits but the last
  if (!initialPrompt || history.length === 0) return;
  const replay = history.slice(0, -1);
  const prompt = initialPrompt;
  history = replay;
  state = { ...state, sessionId: null, revision: 0 };
  queue.reset(); // new session restarts revision numbering
  submitMutation(async () => {
    const sid = await ensureSession();
    let resp = await client.prompt(sid, prompt.slice, prompt.prompt);
    for (const rec of replay) {
      resp = await client.edit(sid, rec.slice, rec.point);
    }
    return resp.revision;
  });
}

async function showAlternatives(): Promise<void> {
  if (!state.sessionId) return;
  const panel = $("alternatives");
  panel.innerHTML = "";
  const resp = await client.alternatives(state.sessionId, state.slice);
  const [h, w] = resp.shape;
  resp.alternatives.forEach((runs: Runs, idx: number) => {
    const mask = decodeRle(runs, h, w);
    const thumb = document.createElement("canvas");
    thumb.width = w;
    thumb.height = h;
    thumb.title = `alternative ${idx}`;
    thumb.className = "alt-thumb";
    const ctx = thumb.getContext("2d")!;
    ctx.putImageData(new ImageData(maskToRgba(mask, w, h, 0.9), w, h), 0, 0);
    thumb.addEventListener("click", () => {
      submitMutation(async () => {
        const r = await client.select(state.sessionId!, resp.slice, idx, state.revision);
        return r.revision;
      });
      panel.innerHTML = "";
    });
    panel.appendChild(thumb);
  });
}

function handleCanvasDown(ev: MouseEvent): void {
  const rect = overlayCanvas.getBoundingClientRect();
  const pos = canvasToGrid(ev.clientX - rect.left, ev.clientY - rect.top, ZOOM);
  const { h, w } = sliceShape();
  pos.row = Math.max(0, Math.min(pos.row, h - 1));
  pos.col = Math.max(0, Math.min(pos.col, w - 1));
  const tool = state.tool;
  if (tool === "boundary") {
    state = setBoundary(state, state.slice);
    $("boundary-label").textContent = boundaryText();
    void refreshBase();
    return;
  }
  if (tool === "box" || tool === "brush") {
    dragStart = pos;
    if (tool === "brush") {
      brushPixels = brushPixels ?? new Uint8Array(h * w);
      paintBrush(pos.row, pos.col);
    }
    return;
  }
  // point tools: before a session exists they are initial prompts,
  // afterwards they are correction points
  const label = tool === "point+" ? "positive" : "negative";
  const point: PointJson = { row: pos.row, col: pos.col, label };
  if (initialPrompt && state.sessionId) sendEdit(point);
  else sendPrompt({ points: [point] });
}

function paintBrush(row: number, col: number): void {
  const { h, w } = sliceShape();
  const radius = 2;
  for (let r = row - radius; r <= row + radius; r++) {
    for (let c = col - radius; c <= col + radius; c++) {
      if (r >= 0 && r < h && c >= 0 && c < w) brushPixels![r * w + c] = 1;
    }
  }
  drawOverlay();
}

function handleCanvasMove(ev: MouseEvent): void {
  if (!dragStart) return;
  const rect = overlayCanvas.getBoundingClientRect();
  const pos = canvasToGrid(ev.clientX - rect.left, ev.clientY - rect.top, ZOOM);
  if (state.tool === "brush") paintBrush(pos.row, pos.col);
}

function handleCanvasUp(ev: MouseEvent): void {
  if (!dragStart) return;
  const rect = overlayCanvas.getBoundingClientRect();
  const pos = canvasToGrid(ev.clientX - rect.left, ev.clientY - rect.top, ZOOM);
  const start = dragStart;
  dragStart = null;
  if (state.tool === "box") {
    const box: [number, number, number, number] = [
      Math.min(start.row, pos.row),
      Math.min(start.col, pos.col),
      Math.max(start.row, pos.row),
      Math.max(start.col, pos.col),
    ];
    sendPrompt({ box });
  } else if (state.tool === "brush" && brushPixels) {
    const { h, w } = sliceShape();
    const low = downsampleBrush(brushPixels, h, w, LOWRES);
    const runs: Runs = [];
    let runStart = -1;
    for (let i = 0; i <= low.length; i++) {
      const v = i < low.length ? low[i] : 0;
      if (v && runStart < 0) runStart = i;
      if (!v && runStart >= 0) {
        runs.push([runStart, i - runStart]);
        runStart = -1;
      }
    }
    brushPixels = null;
    sendPrompt({ mask: { shape: [LOWRES, LOWRES], runs } });
  }
}

function boundaryText(): string {
  const { bottom, top } = state.boundaries;
  return `boundaries: ${bottom ?? "-"} .. ${top ?? "-"}`;
}

function wireControls(): void {
  ($("file") as unknown as HTMLInputElement).addEventListener("change", async (ev) => {
    const input = ev.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    try {
      const info = await client.uploadVolume(await file.arrayBuffer());
      state = { ...initialState(), volumeId: info.volume_id, dims: info.dims };
      maskBySlice = [];
      history = [];
      initialPrompt = null;
      $("dims-label").textContent = `dims ${info.dims.join(" x ")}`;
      const slider = $("slice-slider") as unknown as HTMLInputElement;
      slider.max = String(info.dims[0] - 1);
      slider.value = "0";
      await refreshBase();
      drawOverlay();
    } catch (err) {
      // surface the parser diagnostic verbatim
      showToast(err instanceof ApiError ? err.detail : String(err));
    }
  });

  ($("slice-slider") as unknown as HTMLInputElement).addEventListener("input", async (ev) => {
    state = { ...state, slice: clampSlice(state, Number((ev.target as HTMLInputElement).value)) };
    await refreshBase();
    drawOverlay();
  });

  overlayCanvas.addEventListener("wheel", async (ev) => {
    ev.preventDefault();
    state = { ...state, slice: clampSlice(state, state.slice + Math.sign(ev.deltaY)) };
    ($("slice-slider") as unknown as HTMLInputElement).value = String(state.slice);
    await refreshBase();
    drawOverlay();
  });

  for (const tool of ["point+", "point-", "box", "brush", "boundary"] as Tool[]) {
    $(`tool-${tool}`).addEventListener("click", () => {
      state = { ...state, tool };
      document.querySelectorAll(".tool").forEach((b) => b.classList.remove("active"));
      $(`tool-${tool}`).classList.add("active");
    });
  }

  ($("window-lo") as unknown as HTMLInputElement).addEventListener("change", async (ev) => {
    state = { ...state, window: { ...state.window, lo: Number((ev.target as HTMLInputElement).value) } };
    await refreshBase();
  });
  ($("window-hi") as unknown as HTMLInputElement).addEventListener("change", async (ev) => {
    state = { ...state, window: { ...state.window, hi: Number((ev.target as HTMLInputElement).value) } };
    await refreshBase();
  });
  ($("opacity") as unknown as HTMLInputElement).addEventListener("input", (ev) => {
    state = { ...state, overlayOpacity: Number((ev.target as HTMLInputElement).value) / 100 };
    drawOverlay();
  });

  $("undo").addEventListener("click", () => void undoLastEdit());
  $("alts").addEventListener("click", () => void showAlternatives());

  overlayCanvas.addEventListener("mousedown", handleCanvasDown);
  overlayCanvas.addEventListener("mousemove", handleCanvasMove);
  overlayCanvas.addEventListener("mouseup", handleCanvasUp);
}

wireControls();
void client
  .health()
  .then((h) => ($("status") .textContent = `service ok (api v${h.api_version})`))
  .catch(() => ($("status").textContent = "service unreachable"));
