/** Decode a binary 8-bit PGM (P5) into width/height and gray bytes. */
export interface GrayImage {
  width: number;
  height: number;
  gray: Uint8Array;
}

export function decodePgm(raw: Uint8Array): GrayImage {
  const fields: string[] = [];
  let pos = 0;
  const isSpace = (b: number) => b === 32 || b === 9 || b === 10 || b === 13;
  while (fields.length < 4) {
    while (pos < raw.length && isSpace(raw[pos])) pos++;
    if (raw[pos] === 35 /* # */) {
      while (pos < raw.length && raw[pos] !== 10) pos++;
      continue;
    }
    let end = pos;
    while (end < raw.length && !isSpace(raw[end])) end++;
    fields.push(new TextDecoder().decode(raw.slice(pos, end)));
    pos = end;
  }
  pos++; // single whitespace after maxval
  if (fields[0] !== 'P5') {
    throw new Error(`not a binary PGM: ${fields[0]}`);
  }
  const width = parseInt(fields[1], 10);
  const height = parseInt(fields[2], 10);
  if (parseInt(fields[3], 10) !== 255) {
    throw new Error(`unsupported maxval ${fields[3]}`);
  }
  return { width, height, gray: raw.slice(pos, pos + width * height) };
}
