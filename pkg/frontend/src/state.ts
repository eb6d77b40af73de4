import { Mode, Overlay, Pt } from './types.js';

/** Clicked points, drawn segment and the prediction overlay of one pair. */
export class AnnotationLayer {
  clicks: Pt[] = [];
  segment: Pt[] = [];
  mode: Mode = 'point';
  overlay: Overlay | null = null;
  /** last submitted query, so a mode toggle can re-issue it */
  lastQuery: { points: number[][] } | null = null;

  addClick(p: Pt): void {
    this.clicks.push(p);
  }

  setSegment(points: Pt[]): void {
    this.segment = decimate(points, 64);
  }

  clear(): void {
    this.clicks = [];
    this.segment = [];
    this.overlay = null;
    this.lastQuery = null;
  }

  queryPoints(): number[][] {
    const pts = this.segment.length >= 2 ? this.segment : this.clicks;
    return pts.map((p) => [p.x, p.y]);
  }
}

/** Keep at most n vertices, always retaining the endpoints. */
export function decimate(points: Pt[], n: number): Pt[] {
  if (points.length <= n) {
    return points.slice();
  }
  const out: Pt[] = [];
  for (let i = 0; i < n; i++) {
    out.push(points[Math.round((i * (points.length - 1)) / (n - 1))]);
  }
  return out;
}

export function withinBounds(pts: Pt[], imagePx: number): boolean {
  return pts.every((p) => p.x >= 0 && p.x < imagePx && p.y >= 0 && p.y < imagePx);
}

export class SessionState {
  refId: string | null = null;
  tgtId: string | null = null;
  annotation = new AnnotationLayer();
  /** monotone request counter; stale responses are dropped */
  seq = 0;

  selectPair(refId: string, tgtId: string): void {
    this.refId = refId;
    this.tgtId = tgtId;
    this.annotation.clear();
  }

  nextSeq(): number {
    return ++this.seq;
  }

  isCurrent(seq: number): boolean {
    return seq === this.seq;
  }
}
