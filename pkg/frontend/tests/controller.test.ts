import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api';
import { SessionController, UiSink } from '../src/controller';
import { Overlay, PairMeta, Pt, ViewInfo } from '../src/types';

const VIEWS: ViewInfo[] = [
  {
    id: 's000_lca_v00',
    subject: 0,
    side: 'lca',
    view_idx: 0,
    group: 'A',
    alpha_deg: 40,
    beta_deg: -25,
    image_px: 128,
  },
  {
    id: 's000_lca_v01',
    subject: 0,
    side: 'lca',
    view_idx: 1,
    group: 'A',
    alpha_deg: 40,
    beta_deg: -30,
    image_px: 128,
  },
];

class Sink implements UiSink {
  overlays: Overlay[] = [];
  errors: string[] = [];
  pairs: PairMeta[] = [];
  annotationCalls: { clicks: Pt[]; segment: Pt[] }[] = [];

  showViews(): void {}
  showPair(_r: ViewInfo, _t: ViewInfo, meta: PairMeta): void {
    this.pairs.push(meta);
  }
  showAnnotations(clicks: Pt[], segment: Pt[]): void {
    this.annotationCalls.push({ clicks: clicks.slice(), segment: segment.slice() });
  }
  showOverlay(overlay: Overlay): void {
    this.overlays.push(overlay);
  }
  showError(message: string): void {
    this.errors.push(message);
  }
}

type Responder = (url: string, init?: RequestInit) => { status: number; body: unknown } | null;

function fakeFetch(responder: Responder) {
  return async (url: string, init?: RequestInit): Promise<Response> => {
    const out = responder(url, init);
    if (!out) throw new Error(`unexpected request ${url}`);
    return new Response(JSON.stringify(out.body), {
      status: out.status,
      headers: { 'content-type': 'application/json' },
    });
  };
}

function makeController(responder: Responder) {
  const sink = new Sink();
  const api = new ApiClient('', fakeFetch(responder));
  return { controller: new SessionController(api, sink), sink };
}

const baseResponder: Responder = (url, init) => {
  if (url === '/api/views') return { status: 200, body: VIEWS };
  if (url.startsWith('/api/pairs/')) {
    return {
      status: 200,
      body: { ref_id: 's000_lca_v00', tgt_id: 's000_lca_v01', angle_deg: 5, same_tree: true },
    };
  }
  if (url === '/api/correspond') {
    const body = JSON.parse(String(init?.body)) as { mode: string; points: number[][] };
    if (body.mode === 'curve' && body.points.length < 10) {
      return {
        status: 400,
        body: { code: 'insufficient_points', message: 'insufficient waypoint points' },
      };
    }
    const payload: Record<string, unknown> = { mode: body.mode, clamped: false };
    if (body.mode !== 'curve') {
      payload.points = body.points.map(([x, y]) => [x + 64, y]);
    }
    if (body.mode !== 'point') {
      payload.curve = {
        control_points: [
          [0, 0],
          [10, 10],
          [20, 10],
          [30, 0],
        ],
        samples: body.points,
      };
    }
    return { status: 200, body: payload };
  }
  return null;
};

describe('SessionController', () => {
  it('selecting a pair clears annotations and shows metadata', async () => {
    const { controller, sink } = makeController(baseResponder);
    await controller.loadViews();
    controller.addClick({ x: 1, y: 1 });
    await controller.selectPair('s000_lca_v00', 's000_lca_v01');
    expect(sink.pairs[0].angle_deg).toBe(5);
    expect(controller.state.annotation.clicks).toHaveLength(0);
    const last = sink.annotationCalls.at(-1);
    expect(last?.clicks).toHaveLength(0);
  });

  it('point query produces markers and records the query for re-issue', async () => {
    const { controller, sink } = makeController(baseResponder);
    await controller.loadViews();
    await controller.selectPair('s000_lca_v00', 's000_lca_v01');
    controller.addClick({ x: 10, y: 20 });
    controller.addClick({ x: 30, y: 40 });
    controller.addClick({ x: 50, y: 60 });
    await controller.submit();
    expect(sink.overlays).toHaveLength(1);
    expect(sink.overlays[0].markers).toHaveLength(3);
    expect(sink.overlays[0].markers[0]).toEqual({ x: 74, y: 20 });

    await controller.setMode('refined');
    expect(sink.overlays).toHaveLength(2);
    expect(sink.overlays[1].mode).toBe('refined');
    expect(sink.overlays[1].curve).not.toBeNull();
  });

  it('surfaces 400 errors without dropping input state', async () => {
    const { controller, sink } = makeController(baseResponder);
    await controller.loadViews();
    await controller.selectPair('s000_lca_v00', 's000_lca_v01');
    controller.state.annotation.mode = 'curve';
    controller.setSegment([
      { x: 0, y: 0 },
      { x: 4, y: 4 },
    ]);
    await controller.submit();
    expect(sink.errors).toHaveLength(1);
    expect(sink.errors[0]).toContain('insufficient');
    expect(controller.state.annotation.segment).toHaveLength(2);
  });

  it('discards stale responses by sequence number', async () => {
    let release: (() => void) | null = null;
    const gate = new Promise<void>((resolve) => {
      release = resolve;
    });
    const responder: Responder = (url, init) => baseResponder(url, init);
    const sink = new Sink();
    const api = new ApiClient('', async (url, init) => {
      if (url === '/api/correspond') {
        const body = JSON.parse(String(init?.body)) as { points: number[][] };
        if (body.points.length === 1) {
          await gate; // first request resolves late
        }
      }
      const out = responder(url, init);
      return new Response(JSON.stringify(out!.body), { status: out!.status });
    });
    const controller = new SessionController(api, sink);
    await controller.loadViews();
    await controller.selectPair('s000_lca_v00', 's000_lca_v01');

    controller.addClick({ x: 1, y: 1 });
    const slow = controller.submit();
    controller.addClick({ x: 2, y: 2 });
    const fast = controller.submit();
    await fast;
    release!();
    await slow;
    expect(sink.overlays).toHaveLength(1);
    expect(sink.overlays[0].markers).toHaveLength(2);
  });

  it('errors without a selected pair', async () => {
    const { controller, sink } = makeController(baseResponder);
    await controller.submit();
    expect(sink.errors[0]).toContain('select a view pair');
  });
});
