// Thermal display: fixed 15-45 C scale mapped through a blue-red-yellow ramp,
// nearest-neighbor upscale (each sensor pixel stays a crisp block).

export const THERMAL_MIN_C = 15;
export const THERMAL_MAX_C = 45;

export function centiToCelsius(centi: number): number {
  return centi / 100;
}

export function thermalColor(tempC: number): [number, number, number] {
  const t = clamp((tempC - THERMAL_MIN_C) / (THERMAL_MAX_C - THERMAL_MIN_C), 0, 1);
  // piecewise ramp: deep blue -> red -> yellow
  if (t < 0.5) {
    const k = t / 0.5;
    return [Math.round(40 + 200 * k), Math.round(40 * (1 - k)), Math.round(160 * (1 - k))];
  }
  const k = (t - 0.5) / 0.5;
  return [Math.round(240), Math.round(40 + 200 * k), Math.round(20)];
}

export function frameToRgba(
  centi: number[],
  rows: number,
  cols: number,
): Uint8ClampedArray {
  const out = new Uint8ClampedArray(rows * cols * 4);
  for (let i = 0; i < rows * cols; i++) {
    const [r, g, b] = thermalColor(centiToCelsius(centi[i] ?? 0));
    out[i * 4] = r;
    out[i * 4 + 1] = g;
    out[i * 4 + 2] = b;
    out[i * 4 + 3] = 255;
  }
  return out;
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(Math.max(v, lo), hi);
}
