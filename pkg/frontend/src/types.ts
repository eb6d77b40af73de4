export interface Pt {
  x: number;
  y: number;
}

export type Mode = 'point' | 'curve' | 'refined';

export interface ViewInfo {
  id: string;
  subject: number;
  side: string;
  view_idx: number;
  group: string;
  alpha_deg: number;
  beta_deg: number;
  image_px: number;
}

export interface PairMeta {
  ref_id: string;
  tgt_id: string;
  angle_deg: number;
  same_tree: boolean;
}

export interface CurvePayload {
  control_points: number[][];
  samples: number[][];
}

export interface CorrespondResponse {
  mode: Mode;
  points?: number[][];
  curve?: CurvePayload;
  clamped: boolean;
}

/** What gets drawn over the target pane after a prediction. */
export interface Overlay {
  mode: Mode;
  markers: Pt[];
  curve: CurvePayload | null;
  clamped: boolean;
}

export function toPts(rows: number[][]): Pt[] {
  return rows.map(([x, y]) => ({ x, y }));
}
