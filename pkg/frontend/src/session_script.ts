/**
 * Scripted session against a running service, exercising the full query
 * workflow headlessly: select a pair, issue three point queries and one
 * segment query, toggle the mode, and verify every overlay coordinate
 * falls inside the target pane.
 *
 * Usage: node dist/session_script.js http://127.0.0.1:8008
 */
import { ApiClient } from './api.js';
import { SessionController, UiSink } from './controller.js';
import { decodePgm } from './pgm.js';
import { withinBounds } from './state.js';
import { Overlay, PairMeta, Pt, ViewInfo } from './types.js';

class RecordingSink implements UiSink {
  overlays: Overlay[] = [];
  errors: string[] = [];
  pair: PairMeta | null = null;

  showViews(_views: ViewInfo[]): void {}
  showPair(_ref: ViewInfo, _tgt: ViewInfo, meta: PairMeta): void {
    this.pair = meta;
  }
  showAnnotations(_clicks: Pt[], _segment: Pt[]): void {}
  showOverlay(overlay: Overlay): void {
    this.overlays.push(overlay);
  }
  showError(message: string): void {
    this.errors.push(message);
  }
}

function assert(cond: boolean, label: string): void {
  if (!cond) {
    console.error(`FAIL ${label}`);
    process.exit(1);
  }
  console.log(`PASS ${label}`);
}

function overlayInBounds(overlay: Overlay, imagePx: number): boolean {
  const pts = [...overlay.markers];
  if (overlay.curve) {
    pts.push(...overlay.curve.samples.map(([x, y]) => ({ x, y })));
  }
  return withinBounds(pts, imagePx);
}

async function run(base: string): Promise<void> {
  const api = new ApiClient(base);
  const sink = new RecordingSink();
  const controller = new SessionController(api, sink);

  const views = await controller.loadViews();
  assert(views.length >= 2, `view index loaded (${views.length} views)`);
  const ref = views[0];
  const tgt = views.find((v) => v.subject === ref.subject && v.side === ref.side && v.id !== ref.id)!;

  await controller.selectPair(ref.id, tgt.id);
  assert(sink.pair !== null && sink.pair.same_tree, 'pair selected with metadata');

  const raw = await api.imageBytes(tgt.id);
  const image = decodePgm(raw);
  assert(image.width === ref.image_px, 'target image decodes at native resolution');

  // three point queries
  const px = ref.image_px;
  for (const frac of [0.3, 0.5, 0.7]) {
    controller.addClick({ x: frac * px, y: 0.5 * px });
  }
  await controller.submit();
  const pointOverlay = sink.overlays.at(-1);
  assert(
    pointOverlay !== undefined && pointOverlay.markers.length === 3,
    'three point predictions returned',
  );
  assert(overlayInBounds(pointOverlay!, px), 'point overlay within target pane');

  // one segment query in curve mode
  const segment: Pt[] = [];
  for (let i = 0; i < 24; i++) {
    const t = i / 23;
    segment.push({ x: (0.25 + 0.5 * t) * px, y: (0.45 + 0.1 * Math.sin(3 * t)) * px });
  }
  controller.setSegment(segment);
  await controller.setMode('curve');
  await controller.submit();
  const curveOverlay = sink.overlays.at(-1);
  assert(
    curveOverlay !== undefined &&
      curveOverlay.curve !== null &&
      curveOverlay.curve.control_points.length === 4,
    'segment query returned a curve',
  );
  assert(overlayInBounds(curveOverlay!, px), 'curve overlay within target pane');

  // toggling the mode re-issues the same query
  const before = sink.overlays.length;
  await controller.setMode('refined');
  const refinedOverlay = sink.overlays.at(-1);
  assert(
    sink.overlays.length === before + 1 &&
      refinedOverlay !== undefined &&
      refinedOverlay.mode === 'refined' &&
      refinedOverlay.markers.length > 0,
    'mode toggle re-queried in refined mode',
  );
  assert(overlayInBounds(refinedOverlay!, px), 'refined overlay within target pane');
  assert(sink.errors.length === 0, `no errors surfaced (${sink.errors.join('; ')})`);
  console.log('scripted session complete');
}

const base = process.argv[2] ?? 'http://127.0.0.1:8008';
run(base).catch((err) => {
  console.error('FAIL session crashed:', err);
  process.exit(1);
});
