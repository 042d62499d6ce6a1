/**
 * Client-side decoder for the FQT tensor container.
 *
 * Layout per record: magic "FQT1", u8 dtype code (0 = f32 little-endian),
 * u8 reserved, u16 name length + UTF-8 name, u32 ndim, ndim × u32 dims,
 * then raw little-endian data. Records repeat back-to-back; anything after
 * the last record is an optional trailing JSON block.
 */

export class FqtDecodeError extends Error {}

export interface NamedTensor {
  name: string;
  dims: number[];
  data: Float32Array;
}

export interface FqtDocument {
  tensors: Map<string, NamedTensor>;
  trailing: unknown | null;
}

const MAGIC = 0x46515431; // "FQT1" big-endian read

export function decodeFqt(buffer: ArrayBuffer): FqtDocument {
  const view = new DataView(buffer);
  const tensors = new Map<string, NamedTensor>();
  let offset = 0;
  while (offset + 4 <= view.byteLength && view.getUint32(offset, false) === MAGIC) {
    offset += 4;
    if (offset + 4 > view.byteLength) {
      throw new FqtDecodeError("truncated record header");
    }
    const dtype = view.getUint8(offset);
    if (dtype !== 0) {
      throw new FqtDecodeError(`unknown dtype code ${dtype}`);
    }
    offset += 2; // dtype + reserved byte
    const nameLen = view.getUint16(offset, true);
    offset += 2;
    if (offset + nameLen > view.byteLength) {
      throw new FqtDecodeError("truncated tensor name");
    }
    const name = new TextDecoder().decode(new Uint8Array(buffer, offset, nameLen));
    offset += nameLen;
    if (offset + 4 > view.byteLength) {
      throw new FqtDecodeError(`truncated dims for ${name}`);
    }
    const ndim = view.getUint32(offset, true);
    offset += 4;
    const dims: number[] = [];
    for (let i = 0; i < ndim; i++) {
      if (offset + 4 > view.byteLength) {
        throw new FqtDecodeError(`truncated dims for ${name}`);
      }
      dims.push(view.getUint32(offset, true));
      offset += 4;
    }
    const count = dims.reduce((a, b) => a * b, 1);
    if (offset + 4 * count > view.byteLength) {
      throw new FqtDecodeError(`truncated data for ${name}`);
    }
    const data = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      data[i] = view.getFloat32(offset + 4 * i, true);
    }
    offset += 4 * count;
    tensors.set(name, { name, dims, data });
  }
  let trailing: unknown | null = null;
  if (offset < view.byteLength) {
    const rest = new TextDecoder().decode(new Uint8Array(buffer, offset));
    try {
      trailing = JSON.parse(rest);
    } catch {
      throw new FqtDecodeError("trailing bytes are neither a record nor JSON");
    }
  }
  return { tensors, trailing };
}

export function decodeBase64Fqt(b64: string): NamedTensor {
  let bytes: Uint8Array<ArrayBuffer>;
  try {
    const raw = atob(b64);
    bytes = new Uint8Array(new ArrayBuffer(raw.length));
    for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  } catch {
    throw new FqtDecodeError("invalid base64 payload");
  }
  const doc = decodeFqt(bytes.buffer);
  const first = doc.tensors.values().next();
  if (first.done) {
    throw new FqtDecodeError("container holds no tensors");
  }
  return first.value;
}
