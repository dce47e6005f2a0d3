// Annotation session: click-by-click polygon drawing with snap-to-close,
// vertex dragging before commit, undo, and export in the engine's format.

import { Point, Ring, distance, polygonViolations } from './geometry.js';
import { Slot, serializeSlotMap } from './slotmap.js';

export const SNAP_RADIUS = 10;

export type ClickResult =
  | { kind: 'vertex-added'; vertexCount: number }
  | { kind: 'closed'; slot: Slot }
  | { kind: 'rejected'; reason: string };

type UndoAction =
  | { kind: 'add-vertex' }
  | { kind: 'commit-slot' }
  | { kind: 'move-vertex'; index: number; from: Point };

export class AnnotationSession {
  readonly frameWidth: number;
  readonly frameHeight: number;
  referenceImage: string | null;
  draft: Point[] = [];
  slots: Slot[] = [];
  private undoStack: UndoAction[] = [];
  private nextSlotId = 0;

  constructor(frameWidth: number, frameHeight: number, referenceImage: string | null = null) {
    this.frameWidth = frameWidth;
    this.frameHeight = frameHeight;
    this.referenceImage = referenceImage;
  }

  /** Number of distinct vertices currently drafted. */
  get draftSize(): number {
    return this.draft.length;
  }

  click(p: Point): ClickResult {
    const clamped: Point = {
      x: Math.min(Math.max(p.x, 0), this.frameWidth),
      y: Math.min(Math.max(p.y, 0), this.frameHeight),
    };
    const first = this.draft[0];
    if (first !== undefined && distance(clamped, first) <= SNAP_RADIUS) {
      return this.close();
    }
    this.draft.push(clamped);
    this.undoStack.push({ kind: 'add-vertex' });
    return { kind: 'vertex-added', vertexCount: this.draft.length };
  }

  /** Close the draft into a slot, emitting the explicit closure vertex. */
  close(): ClickResult {
    if (this.draft.length < 3) {
      return {
        kind: 'rejected',
        reason: `need at least 3 distinct vertices to close (have ${this.draft.length})`,
      };
    }
    const ring: Ring = [...this.draft, { ...this.draft[0]! }];
    const violations = polygonViolations(ring);
    if (violations.length > 0) {
      return { kind: 'rejected', reason: violations.join('; ') };
    }
    const slot: Slot = { slotId: this.nextSlotId++, label: null, ring };
    this.slots.push(slot);
    this.draft = [];
    this.undoStack.push({ kind: 'commit-slot' });
    return { kind: 'closed', slot };
  }

  /** Self-intersection preview so the UI can highlight a bad draft early. */
  draftViolations(): string[] {
    if (this.draft.length < 3) return [];
    return polygonViolations([...this.draft, { ...this.draft[0]! }]);
  }

  moveVertex(index: number, to: Point): void {
    const current = this.draft[index];
    if (current === undefined) throw new RangeError(`no draft vertex ${index}`);
    this.undoStack.push({ kind: 'move-vertex', index, from: { ...current } });
    this.draft[index] = {
      x: Math.min(Math.max(to.x, 0), this.frameWidth),
      y: Math.min(Math.max(to.y, 0), this.frameHeight),
    };
  }

  /** Index of the draft vertex within the snap radius of p, if any. */
  hitVertex(p: Point): number | null {
    for (let i = 0; i < this.draft.length; i++) {
      if (distance(p, this.draft[i]!) <= SNAP_RADIUS) return i;
    }
    return null;
  }

  undo(): boolean {
    const action = this.undoStack.pop();
    if (action === undefined) return false;
    switch (action.kind) {
      case 'add-vertex':
        this.draft.pop();
        break;
      case 'commit-slot': {
        const slot = this.slots.pop();
        if (slot !== undefined) {
          this.nextSlotId = slot.slotId;
          this.draft = slot.ring.slice(0, -1);
        }
        break;
      }
      case 'move-vertex':
        this.draft[action.index] = action.from;
        break;
    }
    return true;
  }

  setLabel(slotId: number, label: string | null): void {
    const slot = this.slots.find((s) => s.slotId === slotId);
    if (slot === undefined) throw new RangeError(`no slot ${slotId}`);
    slot.label = label;
  }

  deleteSlot(slotId: number): void {
    this.slots = this.slots.filter((s) => s.slotId !== slotId);
  }

  exportSlotMap(): string {
    return serializeSlotMap(this.slots, this.frameWidth, this.frameHeight, this.referenceImage);
  }
}
