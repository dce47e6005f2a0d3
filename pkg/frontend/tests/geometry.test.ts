import { describe, expect, it } from 'vitest';

import {
  centroid,
  pointInPolygon,
  polygonViolations,
  segmentsIntersect,
  signedArea,
  Ring,
} from '../src/model/geometry.js';

const square: Ring = [
  { x: 0, y: 0 }, { x: 4, y: 0 }, { x: 4, y: 4 }, { x: 0, y: 4 }, { x: 0, y: 0 },
];

describe('segmentsIntersect', () => {
  it('detects a proper crossing', () => {
    expect(segmentsIntersect(
      { x: 0, y: 0 }, { x: 4, y: 4 }, { x: 0, y: 4 }, { x: 4, y: 0 },
    )).toBe(true);
  });

  it('ignores parallel separated segments', () => {
    expect(segmentsIntersect(
      { x: 0, y: 0 }, { x: 4, y: 0 }, { x: 0, y: 2 }, { x: 4, y: 2 },
    )).toBe(false);
  });

  it('counts endpoint touching', () => {
    expect(segmentsIntersect(
      { x: 0, y: 0 }, { x: 4, y: 0 }, { x: 2, y: 0 }, { x: 2, y: 5 },
    )).toBe(true);
  });
});

describe('polygonViolations', () => {
  it('accepts a closed square', () => {
    expect(polygonViolations(square)).toEqual([]);
  });

  it('flags an open ring', () => {
    expect(polygonViolations(square.slice(0, 4))).toEqual(
      expect.arrayContaining([expect.stringContaining('not closed')]),
    );
  });

  it('flags a bow tie', () => {
    const bowTie: Ring = [
      { x: 0, y: 0 }, { x: 4, y: 4 }, { x: 4, y: 0 }, { x: 0, y: 4 }, { x: 0, y: 0 },
    ];
    expect(polygonViolations(bowTie).join(' ')).toContain('self-intersection');
  });

  it('flags duplicate consecutive vertices', () => {
    const dup: Ring = [
      { x: 0, y: 0 }, { x: 4, y: 0 }, { x: 4, y: 0 }, { x: 4, y: 4 },
      { x: 0, y: 4 }, { x: 0, y: 0 },
    ];
    expect(polygonViolations(dup).join(' ')).toContain('duplicate consecutive');
  });

  it('flags zero area', () => {
    const line: Ring = [
      { x: 0, y: 0 }, { x: 2, y: 0 }, { x: 4, y: 0 }, { x: 0, y: 0 },
    ];
    expect(polygonViolations(line).join(' ')).toContain('zero area');
  });
});

describe('pointInPolygon', () => {
  it('classifies interior and exterior', () => {
    expect(pointInPolygon({ x: 2, y: 2 }, square)).toBe(true);
    expect(pointInPolygon({ x: 5, y: 2 }, square)).toBe(false);
  });

  it('handles a concave notch', () => {
    const lShape: Ring = [
      { x: 0, y: 0 }, { x: 4, y: 0 }, { x: 4, y: 2 }, { x: 2, y: 2 },
      { x: 2, y: 4 }, { x: 0, y: 4 }, { x: 0, y: 0 },
    ];
    expect(pointInPolygon({ x: 3, y: 3 }, lShape)).toBe(false);
    expect(pointInPolygon({ x: 1, y: 3 }, lShape)).toBe(true);
  });
});

describe('area and centroid', () => {
  it('computes the square area', () => {
    expect(Math.abs(signedArea(square))).toBe(16);
  });

  it('centroid of the square', () => {
    expect(centroid(square)).toEqual({ x: 2, y: 2 });
  });
});
