// Dashboard wiring: an annotation canvas over a reference frame and a live
// occupancy view fed by the engine's NDJSON event stream.

import { AnnotationSession } from '../model/annotate.js';
import { centroid, Point } from '../model/geometry.js';
import { heatColor, LiveViewState } from '../model/livestate.js';
import { parseSlotMap, Slot } from '../model/slotmap.js';
import { NdjsonParser } from '../model/stream.js';

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
};

// ---------------------------------------------------------------------------
// Tabs
// ---------------------------------------------------------------------------

for (const name of ['annotate', 'live', 'heatmap'] as const) {
  $(`tab-${name}`).addEventListener('click', () => {
    document.querySelectorAll<HTMLElement>('.panel').forEach((p) => (p.style.display = 'none'));
    document.querySelectorAll<HTMLElement>('.tab').forEach((t) => t.classList.remove('active'));
    $(`panel-${name}`).style.display = 'block';
    $(`tab-${name}`).classList.add('active');
    if (name === 'heatmap') void refreshHeatmaps();
  });
}

// ---------------------------------------------------------------------------
// Annotation panel
// ---------------------------------------------------------------------------

const annotateCanvas = $(`annotate-canvas`) as unknown as HTMLCanvasElement;
const annotateStatus = $(`annotate-status`);
let session = new AnnotationSession(annotateCanvas.width, annotateCanvas.height);
let referenceBitmap: ImageBitmap | null = null;
let draggingVertex: number | null = null;

($('image-input') as HTMLInputElement).addEventListener('change', async (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (file === undefined) return;
  referenceBitmap = await createImageBitmap(file);
  annotateCanvas.width = referenceBitmap.width;
  annotateCanvas.height = referenceBitmap.height;
  session = new AnnotationSession(referenceBitmap.width, referenceBitmap.height, file.name);
  drawAnnotation();
});

function canvasPoint(ev: MouseEvent): Point {
  const rect = annotateCanvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) * annotateCanvas.width) / rect.width,
    y: ((ev.clientY - rect.top) * annotateCanvas.height) / rect.height,
  };
}

annotateCanvas.addEventListener('mousedown', (ev) => {
  draggingVertex = session.hitVertex(canvasPoint(ev));
});

annotateCanvas.addEventListener('mousemove', (ev) => {
  if (draggingVertex === null) return;
  session.moveVertex(draggingVertex, canvasPoint(ev));
  drawAnnotation();
});

annotateCanvas.addEventListener('mouseup', (ev) => {
  if (draggingVertex !== null) {
    draggingVertex = null;
    drawAnnotation();
    return;
  }
  const result = session.click(canvasPoint(ev));
  if (result.kind === 'rejected') {
    annotateStatus.textContent = `cannot close: ${result.reason}`;
  } else if (result.kind === 'closed') {
    annotateStatus.textContent = `slot ${result.slot.slotId} committed`;
  } else {
    const bad = session.draftViolations();
    annotateStatus.textContent = bad.length > 0
      ? `draft invalid: ${bad[0]}`
      : `${result.vertexCount} vertices (click the first one to close)`;
  }
  drawAnnotation();
});

$('undo-button').addEventListener('click', () => {
  session.undo();
  annotateStatus.textContent = 'undone';
  drawAnnotation();
});

$('export-button').addEventListener('click', () => {
  const blob = new Blob([session.exportSlotMap()], { type: 'application/json' });
  const link = document.createElement('a');
  link.href = URL.createObjectURL(blob);
  link.download = 'slot_map.json';
  link.click();
  URL.revokeObjectURL(link.href);
});

function drawRing(ctx: CanvasRenderingContext2D, ring: Point[], stroke: string, fill?: string) {
  ctx.beginPath();
  ring.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
  if (fill !== undefined) {
    ctx.fillStyle = fill;
    ctx.fill();
  }
  ctx.strokeStyle = stroke;
  ctx.lineWidth = 2;
  ctx.stroke();
}

function drawAnnotation(): void {
  const ctx = annotateCanvas.getContext('2d');
  if (ctx === null) return;
  ctx.clearRect(0, 0, annotateCanvas.width, annotateCanvas.height);
  if (referenceBitmap !== null) ctx.drawImage(referenceBitmap, 0, 0);
  for (const slot of session.slots) {
    drawRing(ctx, slot.ring, '#1565c0', 'rgba(21,101,192,0.25)');
    const c = centroid(slot.ring);
    ctx.fillStyle = '#0d2d5e';
    ctx.font = '13px sans-serif';
    ctx.fillText(String(slot.slotId), c.x - 4, c.y + 4);
  }
  const invalid = session.draftViolations().length > 0;
  if (session.draft.length > 0) {
    drawRing(ctx, session.draft, invalid ? '#d32f2f' : '#f9a825');
    for (const p of session.draft) {
      ctx.beginPath();
      ctx.arc(p.x, p.y, 4, 0, 2 * Math.PI);
      ctx.fillStyle = invalid ? '#d32f2f' : '#f9a825';
      ctx.fill();
    }
  }
}

// ---------------------------------------------------------------------------
// Live panel
// ---------------------------------------------------------------------------

const liveCanvas = $('live-canvas') as unknown as HTMLCanvasElement;
const liveState = new LiveViewState();
let liveSlots: Slot[] = [];
let showVehicleIds = false;
let abortController: AbortController | null = null;

($('show-ids') as HTMLInputElement).addEventListener('change', (ev) => {
  showVehicleIds = (ev.target as HTMLInputElement).checked;
  drawLive();
});

$('connect-button').addEventListener('click', () => void connect());

function engineBase(): string {
  return ($('engine-url') as HTMLInputElement).value.replace(/\/$/, '');
}

async function connect(): Promise<void> {
  abortController?.abort();
  abortController = new AbortController();
  $('connection-status').textContent = 'connecting';
  try {
    const slotsResp = await fetch(`${engineBase()}/slots`, { signal: abortController.signal });
    const parsed = parseSlotMap(await slotsResp.text());
    liveSlots = parsed.slots;
    liveCanvas.width = parsed.doc.frame_width;
    liveCanvas.height = parsed.doc.frame_height;

    const resp = await fetch(`${engineBase()}/events`, { signal: abortController.signal });
    if (resp.body === null) throw new Error('no response body');
    $('connection-status').textContent = 'live';
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    const parser = new NdjsonParser();
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      for (const message of parser.push(decoder.decode(value, { stream: true }))) {
        liveState.apply(message);
      }
      drawLive();
    }
    throw new Error('stream ended');
  } catch (err) {
    // Reconnect re-requests a snapshot; the stale picture stays visible.
    liveState.markDisconnected();
    $('connection-status').textContent = 'stale (reconnecting)';
    drawLive();
    setTimeout(() => void connect(), 2000);
  }
}

function drawLive(): void {
  const ctx = liveCanvas.getContext('2d');
  if (ctx === null) return;
  ctx.clearRect(0, 0, liveCanvas.width, liveCanvas.height);
  for (const slot of liveSlots) {
    drawRing(ctx, slot.ring, '#333', liveState.slotColor(slot.slotId));
    if (showVehicleIds) {
      const state = liveState.slots.get(slot.slotId);
      if (state !== undefined && state.occupied) {
        const c = centroid(slot.ring);
        ctx.fillStyle = '#fff';
        ctx.font = '12px sans-serif';
        ctx.fillText(String(state.vehicleId), c.x - 6, c.y + 4);
      }
    }
  }
  const bar = liveState.statusBar();
  const red = $('status-red');
  const green = $('status-green');
  red.style.width = `${(bar.redFraction * 100).toFixed(2)}%`;
  green.style.width = `${((1 - bar.redFraction) * 100).toFixed(2)}%`;
  red.textContent = String(bar.occupied);
  green.textContent = String(bar.free);
  $('frame-label').textContent =
    liveState.frameIndex >= 0 ? `frame ${liveState.frameIndex}` : '';
}

// ---------------------------------------------------------------------------
// Heatmap panel (analytics snapshots)
// ---------------------------------------------------------------------------

async function refreshHeatmaps(): Promise<void> {
  const resp = await fetch(`${engineBase()}/analytics`);
  const doc = (await resp.json()) as {
    slot_durations: Record<string, number>;
    slot_vehicle_counts: Record<string, number>;
    timeseries: { frame_index: number; occupied_count: number }[];
  };
  drawHeat('heat-durations', doc.slot_durations, 's');
  drawHeat('heat-counts', doc.slot_vehicle_counts, '');
  drawSparkline(doc.timeseries.map((p) => p.occupied_count));
}

function drawHeat(canvasId: string, values: Record<string, number>, unit: string): void {
  const canvas = $(canvasId) as unknown as HTMLCanvasElement;
  canvas.width = liveCanvas.width || 640;
  canvas.height = liveCanvas.height || 380;
  const ctx = canvas.getContext('2d');
  if (ctx === null) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const nums = Object.values(values);
  const vmin = Math.min(...nums, 0);
  const vmax = Math.max(...nums, 0);
  for (const slot of liveSlots) {
    const v = values[String(slot.slotId)] ?? 0;
    drawRing(ctx, slot.ring, '#333', heatColor(v, vmin, vmax));
    const c = centroid(slot.ring);
    ctx.fillStyle = '#111';
    ctx.font = '11px sans-serif';
    ctx.fillText(`${slot.slotId}: ${v}${unit}`, c.x - 14, c.y + 4);
  }
}

function drawSparkline(counts: number[]): void {
  const canvas = $('heat-timeseries') as unknown as HTMLCanvasElement;
  const ctx = canvas.getContext('2d');
  if (ctx === null || counts.length === 0) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const max = Math.max(...counts, 1);
  ctx.beginPath();
  counts.forEach((c, i) => {
    const x = (i / (counts.length - 1 || 1)) * canvas.width;
    const y = canvas.height - (c / max) * (canvas.height - 4) - 2;
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.strokeStyle = '#1565c0';
  ctx.lineWidth = 1.5;
  ctx.stroke();
}

drawAnnotation();
