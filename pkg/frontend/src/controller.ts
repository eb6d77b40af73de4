import { ApiClient, ApiError } from './api.js';
import { SessionState } from './state.js';
import { Mode, Overlay, PairMeta, Pt, toPts, ViewInfo } from './types.js';

/** Everything the controller tells the surrounding UI to do. */
export interface UiSink {
  showViews(views: ViewInfo[]): void;
  showPair(ref: ViewInfo, tgt: ViewInfo, meta: PairMeta): void;
  showAnnotations(clicks: Pt[], segment: Pt[]): void;
  showOverlay(overlay: Overlay): void;
  showError(message: string): void;
}

export class SessionController {
  state = new SessionState();
  views: ViewInfo[] = [];

  constructor(
    private api: ApiClient,
    private ui: UiSink,
  ) {}

  async loadViews(): Promise<ViewInfo[]> {
    this.views = await this.api.views();
    this.ui.showViews(this.views);
    return this.views;
  }

  viewInfo(id: string): ViewInfo {
    const info = this.views.find((v) => v.id === id);
    if (!info) {
      throw new Error(`unknown view ${id}`);
    }
    return info;
  }

  async selectPair(refId: string, tgtId: string): Promise<void> {
    this.state.selectPair(refId, tgtId);
    try {
      const meta = await this.api.pairMeta(refId, tgtId);
      this.ui.showPair(this.viewInfo(refId), this.viewInfo(tgtId), meta);
      this.ui.showAnnotations([], []);
    } catch (err) {
      this.surface(err);
    }
  }

  addClick(p: Pt): void {
    this.state.annotation.addClick(p);
    this.ui.showAnnotations(this.state.annotation.clicks, this.state.annotation.segment);
  }

  setSegment(points: Pt[]): void {
    this.state.annotation.setSegment(points);
    this.ui.showAnnotations(this.state.annotation.clicks, this.state.annotation.segment);
  }

  setMode(mode: Mode): Promise<void> {
    this.state.annotation.mode = mode;
    // re-issue the current annotation in the new mode so results compare
    if (this.state.annotation.queryPoints().length > 0) {
      return this.submit();
    }
    return Promise.resolve();
  }

  /** Send the currently annotated points (segment wins over clicks). */
  submit(): Promise<void> {
    return this.submitPoints(this.state.annotation.queryPoints());
  }

  private async submitPoints(points: number[][]): Promise<void> {
    const { refId, tgtId } = this.state;
    if (!refId || !tgtId) {
      this.ui.showError('select a view pair first');
      return;
    }
    if (points.length === 0) {
      this.ui.showError('click at least one point');
      return;
    }
    const mode = this.state.annotation.mode;
    const seq = this.state.nextSeq();
    try {
      const resp = await this.api.correspond(refId, tgtId, mode, points);
      if (!this.state.isCurrent(seq)) {
        return; // a newer request superseded this one
      }
      const overlay: Overlay = {
        mode,
        markers: resp.points ? toPts(resp.points) : [],
        curve: resp.curve ?? null,
        clamped: resp.clamped,
      };
      this.state.annotation.overlay = overlay;
      this.state.annotation.lastQuery = { points };
      this.ui.showOverlay(overlay);
    } catch (err) {
      if (this.state.isCurrent(seq)) {
        this.surface(err);
      }
    }
  }

  private surface(err: unknown): void {
    if (err instanceof ApiError) {
      this.ui.showError(`${err.code}: ${err.message}`);
    } else {
      this.ui.showError(String(err));
    }
  }
}
