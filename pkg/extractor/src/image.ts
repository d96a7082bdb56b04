/**
 * Netpbm image decoding (PGM P2/P5, PPM P3/P6) to float pixels in [0, 1].
 * 8-bit samples only; header comments are honored.
 */

export interface DecodedImage {
  width: number;
  height: number;
  /** 1 (grayscale) or 3 (rgb); samples interleaved row-major. */
  channels: number;
  data: Float32Array;
}

const FORMATS: Record<string, { channels: number; binary: boolean }> = {
  P2: { channels: 1, binary: false },
  P3: { channels: 3, binary: false },
  P5: { channels: 1, binary: true },
  P6: { channels: 3, binary: true },
};

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d || byte === 0x0c;
}

/** Read the next whitespace-delimited token, skipping # comments. */
function nextToken(buf: Buffer, pos: number): { token: string; pos: number } {
  while (pos < buf.length) {
    if (isSpace(buf[pos])) {
      pos++;
    } else if (buf[pos] === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
    } else {
      break;
    }
  }
  const start = pos;
  while (pos < buf.length && !isSpace(buf[pos]) && buf[pos] !== 0x23) pos++;
  if (start === pos) throw new Error('unexpected end of image header');
  return { token: buf.toString('ascii', start, pos), pos };
}

export function decodeNetpbm(buf: Buffer): DecodedImage {
  let { token: magic, pos } = nextToken(buf, 0);
  const format = FORMATS[magic];
  if (!format) {
    throw new Error(`unsupported image magic ${JSON.stringify(magic)}; expected P2/P3/P5/P6`);
  }
  let width: number, height: number, maxval: number;
  ({ token: magic, pos } = nextToken(buf, pos));
  width = parseInt(magic, 10);
  ({ token: magic, pos } = nextToken(buf, pos));
  height = parseInt(magic, 10);
  ({ token: magic, pos } = nextToken(buf, pos));
  maxval = parseInt(magic, 10);
  if (!(width >= 1) || !(height >= 1)) {
    throw new Error(`bad image dimensions ${width}x${height}`);
  }
  if (!(maxval >= 1) || maxval > 255) {
    throw new Error(`unsupported maxval ${maxval}; 8-bit samples only`);
  }

  const count = width * height * format.channels;
  const data = new Float32Array(count);
  if (format.binary) {
    pos++; // single whitespace byte after maxval
    if (buf.length - pos < count) {
      throw new Error(`image truncated: ${buf.length - pos} sample bytes, expected ${count}`);
    }
    for (let i = 0; i < count; i++) {
      data[i] = buf[pos + i] / maxval;
    }
  } else {
    for (let i = 0; i < count; i++) {
      let token;
      ({ token, pos } = nextToken(buf, pos));
      const value = parseInt(token, 10);
      if (!(value >= 0) || value > maxval) {
        throw new Error(`sample ${i} value ${token} outside [0, ${maxval}]`);
      }
      data[i] = value / maxval;
    }
  }
  return { width, height, channels: format.channels, data };
}

/**
 * Convert decoded samples to the channel count a model expects: grayscale
 * replicates into rgb, rgb collapses to luminance-free mean for a
 * single-channel model.
 */
export function matchChannels(image: DecodedImage, wanted: number): Float32Array {
  if (image.channels === wanted) return image.data;
  const pixels = image.width * image.height;
  const out = new Float32Array(pixels * wanted);
  if (image.channels === 1 && wanted === 3) {
    for (let i = 0; i < pixels; i++) {
      out[3 * i] = out[3 * i + 1] = out[3 * i + 2] = image.data[i];
    }
    return out;
  }
  if (image.channels === 3 && wanted === 1) {
    for (let i = 0; i < pixels; i++) {
      out[i] = (image.data[3 * i] + image.data[3 * i + 1] + image.data[3 * i + 2]) / 3;
    }
    return out;
  }
  throw new Error(`cannot map a ${image.channels}-channel image to ${wanted} channels`);
}
