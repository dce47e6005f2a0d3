// The slot-map JSON document: the exact format the engine loads and the
// annotation tool exports. Vertices are [x, y] pairs with the closing
// vertex explicit.

import { Point, Ring, polygonViolations } from './geometry.js';

export interface SlotEntryDoc {
  slot_id: number;
  label: string | null;
  polygon: [number, number][];
}

export interface SlotMapDoc {
  version: number;
  frame_width: number;
  frame_height: number;
  reference_image: string | null;
  slots: SlotEntryDoc[];
}

export interface Slot {
  slotId: number;
  label: string | null;
  ring: Ring;
}

export function ringToPairs(ring: Ring): [number, number][] {
  return ring.map((p) => [p.x, p.y]);
}

export function pairsToRing(pairs: [number, number][]): Ring {
  return pairs.map(([x, y]) => ({ x, y }));
}

export function serializeSlotMap(
  slots: Slot[],
  frameWidth: number,
  frameHeight: number,
  referenceImage: string | null = null,
): string {
  const doc: SlotMapDoc = {
    version: 1,
    frame_width: frameWidth,
    frame_height: frameHeight,
    reference_image: referenceImage,
    slots: [...slots]
      .sort((a, b) => a.slotId - b.slotId)
      .map((s) => ({
        slot_id: s.slotId,
        label: s.label,
        polygon: ringToPairs(s.ring),
      })),
  };
  return JSON.stringify(doc, null, 2) + '\n';
}

export function parseSlotMap(text: string): { slots: Slot[]; doc: SlotMapDoc; errors: string[] } {
  const errors: string[] = [];
  let doc: SlotMapDoc;
  try {
    doc = JSON.parse(text) as SlotMapDoc;
  } catch (err) {
    return { slots: [], doc: emptyDoc(), errors: [`parse error: ${String(err)}`] };
  }
  for (const field of ['version', 'frame_width', 'frame_height', 'slots'] as const) {
    if (!(field in doc)) errors.push(`missing field: ${field}`);
  }
  if (errors.length > 0) return { slots: [], doc, errors };

  const slots: Slot[] = [];
  const seen = new Set<number>();
  for (const entry of doc.slots) {
    if (!Number.isInteger(entry.slot_id) || entry.slot_id < 0) {
      errors.push(`slot_id must be a non-negative integer: ${entry.slot_id}`);
      continue;
    }
    if (seen.has(entry.slot_id)) {
      errors.push(`duplicate slot_id ${entry.slot_id}`);
      continue;
    }
    seen.add(entry.slot_id);
    const ring = pairsToRing(entry.polygon);
    const violations = polygonViolations(ring);
    if (violations.length > 0) {
      errors.push(...violations.map((v) => `slot ${entry.slot_id}: ${v}`));
      continue;
    }
    slots.push({ slotId: entry.slot_id, label: entry.label ?? null, ring });
  }
  slots.sort((a, b) => a.slotId - b.slotId);
  return { slots, doc, errors };
}

function emptyDoc(): SlotMapDoc {
  return { version: 1, frame_width: 0, frame_height: 0, reference_image: null, slots: [] };
}

export function ringsEqual(a: Ring, b: Ring): boolean {
  if (a.length !== b.length) return false;
  return a.every((p, i) => p.x === b[i]!.x && p.y === b[i]!.y);
}
