// Incremental parser for the engine's newline-delimited JSON event stream,
// plus the message types it carries.

export interface SnapshotMessage {
  type: 'snapshot';
  f: number;
  t: number | null;
  slot_ids: number[];
  s: [number, number][]; // [occupied01, vehicle_id] per slot
  u: number[];
  occupied: number;
  free: number;
  total: number;
}

export interface SummaryMessage {
  type: 'summary';
  f: number;
  occupied: number;
  free: number;
  total: number;
}

export interface EventMessage {
  type: 'event';
  f: number;
  slot_id: number;
  kind: 'occupied' | 'freed' | 'vehicle_changed';
  vehicle_id: number;
}

export type StreamMessage = SnapshotMessage | SummaryMessage | EventMessage;

/** Buffers arbitrary chunk boundaries and yields complete JSON lines. */
export class NdjsonParser {
  private buffer = '';

  push(chunk: string): StreamMessage[] {
    this.buffer += chunk;
    const messages: StreamMessage[] = [];
    let newline = this.buffer.indexOf('\n');
    while (newline >= 0) {
      const line = this.buffer.slice(0, newline).trim();
      this.buffer = this.buffer.slice(newline + 1);
      if (line.length > 0) {
        messages.push(JSON.parse(line) as StreamMessage);
      }
      newline = this.buffer.indexOf('\n');
    }
    return messages;
  }

  /** Bytes still waiting for their newline (a partial trailing message). */
  get pending(): number {
    return this.buffer.length;
  }
}
