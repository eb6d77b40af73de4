import { CorrespondResponse, Mode, PairMeta, ViewInfo } from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = '',
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    if (!resp.ok) {
      let code = 'http_error';
      let message = `${resp.status}`;
      try {
        const body = (await resp.json()) as { code?: string; message?: string };
        code = body.code ?? code;
        message = body.message ?? message;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, code, message);
    }
    return (await resp.json()) as T;
  }

  views(): Promise<ViewInfo[]> {
    return this.json<ViewInfo[]>('/api/views');
  }

  async imageBytes(id: string): Promise<Uint8Array> {
    const resp = await this.fetchImpl(`${this.base}/api/views/${id}/image`);
    if (!resp.ok) {
      throw new ApiError(resp.status, 'image_error', `image ${id}: ${resp.status}`);
    }
    return new Uint8Array(await resp.arrayBuffer());
  }

  pairMeta(refId: string, tgtId: string): Promise<PairMeta> {
    return this.json<PairMeta>(`/api/pairs/${refId}/${tgtId}`);
  }

  correspond(
    refId: string,
    tgtId: string,
    mode: Mode,
    points: number[][],
  ): Promise<CorrespondResponse> {
    return this.json<CorrespondResponse>('/api/correspond', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ ref_id: refId, tgt_id: tgtId, mode, points }),
    });
  }
}
