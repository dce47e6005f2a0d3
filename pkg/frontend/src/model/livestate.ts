// Live view model: a pure fold of (snapshot, deltas) into per-slot
// occupancy, the status bar, and heat colors for the analytics tabs.

import { StreamMessage } from './stream.js';

export interface SlotState {
  occupied: boolean;
  vehicleId: number; // 0 when free
}

export interface StatusBar {
  occupied: number;
  free: number;
  total: number;
  redFraction: number; // occupied / total, 0 for an empty map
}

export type ConnectionStatus = 'connecting' | 'live' | 'stale';

export const COLOR_OCCUPIED = '#c62828';
export const COLOR_FREE = '#2e7d32';
export const COLOR_UNKNOWN = '#9e9e9e';

export class LiveViewState {
  slots = new Map<number, SlotState>();
  frameIndex = -1;
  timestampMs: number | null = null;
  connection: ConnectionStatus = 'connecting';
  summaryHistory: { f: number; occupied: number }[] = [];
  historyLimit = 600;
  private haveSnapshot = false;

  apply(message: StreamMessage): void {
    switch (message.type) {
      case 'snapshot': {
        this.slots = new Map(
          message.slot_ids.map((sid, i) => {
            const entry = message.s[i] ?? [0, 0];
            return [sid, { occupied: entry[0] === 1, vehicleId: entry[1] }];
          }),
        );
        this.frameIndex = message.f;
        this.timestampMs = message.t;
        this.haveSnapshot = true;
        this.connection = 'live';
        this.pushSummary(message.f, message.occupied);
        break;
      }
      case 'event': {
        if (!this.haveSnapshot) return; // deltas before a snapshot are invalid
        const next: SlotState =
          message.kind === 'freed'
            ? { occupied: false, vehicleId: 0 }
            : { occupied: true, vehicleId: message.vehicle_id };
        this.slots.set(message.slot_id, next);
        break;
      }
      case 'summary': {
        if (!this.haveSnapshot) return;
        this.frameIndex = message.f;
        this.pushSummary(message.f, message.occupied);
        break;
      }
    }
  }

  private pushSummary(f: number, occupied: number): void {
    this.summaryHistory.push({ f, occupied });
    if (this.summaryHistory.length > this.historyLimit) {
      this.summaryHistory.splice(0, this.summaryHistory.length - this.historyLimit);
    }
  }

  /** Coloring derives solely from the latest folded occupancy state. */
  slotColor(slotId: number): string {
    const state = this.slots.get(slotId);
    if (state === undefined) return COLOR_UNKNOWN;
    return state.occupied ? COLOR_OCCUPIED : COLOR_FREE;
  }

  statusBar(): StatusBar {
    let occupied = 0;
    for (const s of this.slots.values()) if (s.occupied) occupied++;
    const total = this.slots.size;
    return {
      occupied,
      free: total - occupied,
      total,
      redFraction: total === 0 ? 0 : occupied / total,
    };
  }

  /** Disconnection keeps the stale picture; reconnect re-requests a snapshot. */
  markDisconnected(): void {
    this.connection = 'stale';
    this.haveSnapshot = false;
  }
}

// Heat ramp for the analytics tabs, matching the engine's SVG export.
const RAMP_LOW: [number, number, number] = [0xff, 0xff, 0xcc];
const RAMP_HIGH: [number, number, number] = [0x80, 0x00, 0x26];

export function heatColor(value: number, vmin: number, vmax: number): string {
  const span = vmax - vmin;
  const t = span === 0 ? 1 : Math.min(Math.max((value - vmin) / span, 0), 1);
  const rgb = RAMP_LOW.map((lo, i) => Math.round(lo + (RAMP_HIGH[i]! - lo) * t));
  return '#' + rgb.map((v) => v.toString(16).padStart(2, '0')).join('');
}
