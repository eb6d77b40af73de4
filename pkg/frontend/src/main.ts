import { ApiClient } from './api.js';
import { SessionController, UiSink } from './controller.js';
import { decodePgm } from './pgm.js';
import { Mode, Overlay, PairMeta, Pt, ViewInfo } from './types.js';

// marker colors follow the usual convention: P2P blue, curve-refined red
const MODE_COLORS: Record<Mode, string> = {
  point: '#3b6fe0',
  curve: '#e0a13b',
  refined: '#e03b3b',
};

class Pane {
  ctx: CanvasRenderingContext2D;
  imagePx = 512;
  private bitmap: ImageData | null = null;

  constructor(public canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext('2d');
    if (!ctx) throw new Error('2d canvas unavailable');
    this.ctx = ctx;
  }

  async setImage(raw: Uint8Array): Promise<void> {
    const { width, height, gray } = decodePgm(raw);
    this.imagePx = width;
    this.canvas.width = width;
    this.canvas.height = height;
    const data = new Uint8ClampedArray(width * height * 4);
    for (let i = 0; i < gray.length; i++) {
      data[4 * i] = data[4 * i + 1] = data[4 * i + 2] = gray[i];
      data[4 * i + 3] = 255;
    }
    this.bitmap = new ImageData(data, width, height);
    this.redraw();
  }

  redraw(): void {
    if (this.bitmap) {
      this.ctx.putImageData(this.bitmap, 0, 0);
    }
  }

  drawMarkers(points: Pt[], color: string): void {
    this.ctx.strokeStyle = color;
    this.ctx.lineWidth = 1.5;
    for (const p of points) {
      this.ctx.beginPath();
      this.ctx.arc(p.x, p.y, 3, 0, 2 * Math.PI);
      this.ctx.stroke();
    }
  }

  drawPolyline(points: Pt[], color: string): void {
    if (points.length < 2) return;
    this.ctx.strokeStyle = color;
    this.ctx.lineWidth = 1.5;
    this.ctx.beginPath();
    this.ctx.moveTo(points[0].x, points[0].y);
    for (const p of points.slice(1)) {
      this.ctx.lineTo(p.x, p.y);
    }
    this.ctx.stroke();
  }

  toImageCoords(ev: MouseEvent): Pt {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: ((ev.clientX - rect.left) / rect.width) * this.canvas.width,
      y: ((ev.clientY - rect.top) / rect.height) * this.canvas.height,
    };
  }
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

class DomUi implements UiSink {
  refPane = new Pane(el<HTMLCanvasElement>('ref-pane'));
  tgtPane = new Pane(el<HTMLCanvasElement>('tgt-pane'));
  refSelect = el<HTMLSelectElement>('ref-select');
  tgtSelect = el<HTMLSelectElement>('tgt-select');
  status = el<HTMLDivElement>('status');
  pairLabel = el<HTMLDivElement>('pair-label');

  constructor(private api: ApiClient) {}

  showViews(views: ViewInfo[]): void {
    for (const select of [this.refSelect, this.tgtSelect]) {
      select.innerHTML = '';
      for (const v of views) {
        const opt = document.createElement('option');
        opt.value = v.id;
        opt.textContent = `${v.id} (${v.group} ${v.alpha_deg}/${v.beta_deg})`;
        select.appendChild(opt);
      }
    }
  }

  showPair(ref: ViewInfo, tgt: ViewInfo, meta: PairMeta): void {
    this.pairLabel.textContent =
      `${ref.id} (α ${ref.alpha_deg}°, β ${ref.beta_deg}°) → ` +
      `${tgt.id} (α ${tgt.alpha_deg}°, β ${tgt.beta_deg}°), ` +
      `angle ${meta.angle_deg.toFixed(1)}°`;
    void this.loadImages(ref.id, tgt.id);
  }

  private async loadImages(refId: string, tgtId: string): Promise<void> {
    await this.refPane.setImage(await this.api.imageBytes(refId));
    await this.tgtPane.setImage(await this.api.imageBytes(tgtId));
  }

  showAnnotations(clicks: Pt[], segment: Pt[]): void {
    this.refPane.redraw();
    this.refPane.drawMarkers(clicks, '#3be06f');
    this.refPane.drawPolyline(segment, '#3be06f');
  }

  showOverlay(overlay: Overlay): void {
    this.tgtPane.redraw();
    const color = MODE_COLORS[overlay.mode];
    if (overlay.curve) {
      this.tgtPane.drawPolyline(
        overlay.curve.samples.map(([x, y]) => ({ x, y })),
        MODE_COLORS.curve,
      );
      this.tgtPane.drawMarkers(
        [overlay.curve.samples[0], overlay.curve.samples.at(-1)!].map(([x, y]) => ({ x, y })),
        MODE_COLORS.curve,
      );
    }
    this.tgtPane.drawMarkers(overlay.markers, color);
    this.status.textContent = overlay.clamped
      ? 'prediction clamped to image bounds'
      : '';
  }

  showError(message: string): void {
    this.status.textContent = `error: ${message}`;
  }
}

function wireEvents(controller: SessionController, ui: DomUi): void {
  const modeSelect = el<HTMLSelectElement>('mode-select');
  const drag: Pt[] = [];
  let dragging = false;

  el<HTMLButtonElement>('load-pair').addEventListener('click', () => {
    void controller.selectPair(ui.refSelect.value, ui.tgtSelect.value);
  });
  el<HTMLButtonElement>('submit').addEventListener('click', () => void controller.submit());
  el<HTMLButtonElement>('clear').addEventListener('click', () => {
    controller.state.annotation.clear();
    ui.showAnnotations([], []);
    ui.tgtPane.redraw();
  });
  modeSelect.addEventListener('change', () => {
    void controller.setMode(modeSelect.value as Mode);
  });

  ui.refPane.canvas.addEventListener('click', (ev) => {
    if (!dragging) controller.addClick(ui.refPane.toImageCoords(ev));
  });
  ui.refPane.canvas.addEventListener('mousedown', (ev) => {
    if (ev.shiftKey) {
      dragging = true;
      drag.length = 0;
    }
  });
  ui.refPane.canvas.addEventListener('mousemove', (ev) => {
    if (dragging) drag.push(ui.refPane.toImageCoords(ev));
  });
  window.addEventListener('mouseup', () => {
    if (dragging) {
      dragging = false;
      controller.setSegment(drag.slice());
    }
  });
}

async function boot(): Promise<void> {
  const api = new ApiClient('');
  const ui = new DomUi(api);
  const controller = new SessionController(api, ui);
  wireEvents(controller, ui);
  const views = await controller.loadViews();
  if (views.length >= 2) {
    await controller.selectPair(views[0].id, views[1].id);
    ui.refSelect.value = views[0].id;
    ui.tgtSelect.value = views[1].id;
  }
}

document.addEventListener('DOMContentLoaded', () => {
  void boot();
});
