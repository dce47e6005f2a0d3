// Client-side mirror of the engine's polygon validation rules, so bad
// annotations are caught before export instead of at engine load time.

export interface Point {
  x: number;
  y: number;
}

export type Ring = Point[]; // closed: first point repeated as the last one

function orient(p: Point, q: Point, r: Point): number {
  return (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
}

function onSegment(p: Point, a: Point, b: Point): boolean {
  return (
    Math.min(a.x, b.x) <= p.x && p.x <= Math.max(a.x, b.x) &&
    Math.min(a.y, b.y) <= p.y && p.y <= Math.max(a.y, b.y)
  );
}

export function segmentsIntersect(a1: Point, a2: Point, b1: Point, b2: Point): boolean {
  const d1 = orient(b1, b2, a1);
  const d2 = orient(b1, b2, a2);
  const d3 = orient(a1, a2, b1);
  const d4 = orient(a1, a2, b2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  if (d1 === 0 && onSegment(a1, b1, b2)) return true;
  if (d2 === 0 && onSegment(a2, b1, b2)) return true;
  if (d3 === 0 && onSegment(b1, a1, a2)) return true;
  if (d4 === 0 && onSegment(b2, a1, a2)) return true;
  return false;
}

export function signedArea(ring: Ring): number {
  let total = 0;
  for (let i = 0; i < ring.length - 1; i++) {
    const a = ring[i]!;
    const b = ring[i + 1]!;
    total += a.x * b.y - b.x * a.y;
  }
  return total / 2;
}

export function centroid(ring: Ring): Point {
  const pts = ring.slice(0, -1);
  const n = pts.length || 1;
  return {
    x: pts.reduce((s, p) => s + p.x, 0) / n,
    y: pts.reduce((s, p) => s + p.y, 0) / n,
  };
}

export function pointInPolygon(p: Point, ring: Ring): boolean {
  // Crossing parity with the half-open vertex rule (ray toward +x).
  let crossings = 0;
  for (let i = 0; i < ring.length - 1; i++) {
    const a = ring[i]!;
    const b = ring[i + 1]!;
    if ((a.y > p.y) === (b.y > p.y)) continue;
    const xCross = a.x + ((p.y - a.y) * (b.x - a.x)) / (b.y - a.y);
    if (xCross > p.x) crossings++;
  }
  return crossings % 2 === 1;
}

/** Every violated polygon invariant, mirroring the engine's messages. */
export function polygonViolations(ring: Ring): string[] {
  const violations: string[] = [];
  for (let i = 0; i < ring.length; i++) {
    const p = ring[i]!;
    if (!Number.isFinite(p.x) || !Number.isFinite(p.y)) {
      violations.push(`non-finite vertex at index ${i}`);
    }
  }
  if (violations.length > 0) return violations;

  if (ring.length < 4) {
    violations.push(`too few vertices: ${ring.length} (need at least 4 including the closing vertex)`);
    return violations;
  }
  const first = ring[0]!;
  const last = ring[ring.length - 1]!;
  const closed = first.x === last.x && first.y === last.y;
  if (!closed) violations.push('not closed: first vertex != last vertex');

  for (let i = 0; i < ring.length - 1; i++) {
    const a = ring[i]!;
    const b = ring[i + 1]!;
    if (a.x === b.x && a.y === b.y) {
      violations.push(`duplicate consecutive vertices at indices ${i},${i + 1}`);
    }
  }

  const work: Ring = closed ? ring : [...ring, first];
  const nEdges = work.length - 1;
  for (let i = 0; i < nEdges; i++) {
    for (let j = i + 2; j < nEdges; j++) {
      if (i === 0 && j === nEdges - 1) continue; // adjacent through closure
      if (segmentsIntersect(work[i]!, work[i + 1]!, work[j]!, work[j + 1]!)) {
        violations.push(`self-intersection between edges ${i} and ${j}`);
      }
    }
  }

  if (Math.abs(signedArea(work)) <= 0) violations.push('zero area');
  return violations;
}

export function distance(a: Point, b: Point): number {
  return Math.hypot(a.x - b.x, a.y - b.y);
}
