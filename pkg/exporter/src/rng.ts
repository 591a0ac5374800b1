/**
 * splitmix64 stream with an unbiased bounded draw.
 *
 * The constants and update rule are pinned: the recall engine's pair sampler
 * uses the identical stream, and pair files from both sides must match
 * line for line for the same seed.
 */

const MASK64 = (1n << 64n) - 1n;
const GOLDEN = 0x9e3779b97f4a7c15n;

export function mix64(x: bigint): bigint {
  x &= MASK64;
  x = ((x ^ (x >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
  x = ((x ^ (x >> 27n)) * 0x94d049bb133111ebn) & MASK64;
  return (x ^ (x >> 31n)) & MASK64;
}

export class Splitmix64 {
  private state: bigint;

  constructor(seed: number | bigint, stream: number | bigint) {
    this.state = mix64((BigInt(seed) & MASK64) ^ mix64((BigInt(stream) + 1n) * GOLDEN));
  }

  next64(): bigint {
    this.state = (this.state + GOLDEN) & MASK64;
    return mix64(this.state);
  }

  /** Uniform integer in [0, bound) via rejection sampling. */
  below(bound: number): number {
    if (bound < 1) throw new RangeError(`bound must be >= 1, got ${bound}`);
    const b = BigInt(bound);
    const limit = (MASK64 + 1n) - ((MASK64 + 1n) % b);
    for (;;) {
      const r = this.next64();
      if (r < limit) return Number(r % b);
    }
  }
}
