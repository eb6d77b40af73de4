import { describe, expect, it } from 'vitest';

import { decodePgm } from '../src/pgm';

function pgmBytes(width: number, height: number, gray: number[]): Uint8Array {
  const header = new TextEncoder().encode(`P5\n${width} ${height}\n255\n`);
  const out = new Uint8Array(header.length + gray.length);
  out.set(header);
  out.set(gray, header.length);
  return out;
}

describe('decodePgm', () => {
  it('decodes header and pixels', () => {
    const img = decodePgm(pgmBytes(3, 2, [0, 128, 255, 10, 20, 30]));
    expect(img.width).toBe(3);
    expect(img.height).toBe(2);
    expect([...img.gray]).toEqual([0, 128, 255, 10, 20, 30]);
  });

  it('rejects non-P5 input', () => {
    const ascii = new TextEncoder().encode('P2\n1 1\n255\n0');
    expect(() => decodePgm(ascii)).toThrow(/not a binary PGM/);
  });

  it('skips comment lines', () => {
    const raw = new TextEncoder().encode('P5\n# hello\n2 1\n255\nAB');
    const img = decodePgm(raw);
    expect(img.width).toBe(2);
    expect([...img.gray]).toEqual([65, 66]);
  });
});
