// Top-down minimap geometry: floor-plan cells, craft pose, covered cells,
// and evidence markers, all in plan meters mapped to canvas pixels.
// Pure math here so it can be unit-tested without a DOM.

export interface PlanInfo {
  width_m: number;
  height_m: number;
  cell_size_m: number;
  cells: string[]; // '#' wall/obstacle, '.' free; row 0 at y = 0
}

export interface EvidenceMarker {
  id: string;
  kind: string;
  pos: [number, number];
}

export interface MapTransform {
  scale: number; // px per meter
  offsetX: number;
  offsetY: number;
  canvasW: number;
  canvasH: number;
}

export function fitTransform(plan: PlanInfo, canvasW: number, canvasH: number): MapTransform {
  const scale = Math.min(canvasW / plan.width_m, canvasH / plan.height_m);
  return {
    scale,
    offsetX: (canvasW - plan.width_m * scale) / 2,
    offsetY: (canvasH - plan.height_m * scale) / 2,
    canvasW,
    canvasH,
  };
}

// Plan y grows up; canvas y grows down.
export function toCanvas(t: MapTransform, planH: number, x: number, y: number): [number, number] {
  return [t.offsetX + x * t.scale, t.offsetY + (planH - y) * t.scale];
}

export function coverageCellKey(plan: PlanInfo, x: number, y: number): string {
  const col = Math.floor(x / plan.cell_size_m);
  const row = Math.floor(y / plan.cell_size_m);
  return `${row},${col}`;
}

export interface CellRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export function wallRects(plan: PlanInfo, t: MapTransform, stride = 4): CellRect[] {
  // Coarsened wall rendering: sample every `stride` cells to keep the
  // draw list small for big plans.
  const rects: CellRect[] = [];
  const cs = plan.cell_size_m;
  for (let r = 0; r < plan.cells.length; r += stride) {
    const row = plan.cells[r];
    for (let c = 0; c < row.length; c += stride) {
      if (row[c] !== "#") continue;
      const [px, py] = toCanvas(t, plan.height_m, c * cs, (r + stride) * cs);
      rects.push({ x: px, y: py, w: cs * stride * t.scale, h: cs * stride * t.scale });
    }
  }
  return rects;
}

export function coverageRect(plan: PlanInfo, t: MapTransform, key: string): CellRect | null {
  const [rowStr, colStr] = key.split(",");
  const row = Number(rowStr);
  const col = Number(colStr);
  if (!Number.isFinite(row) || !Number.isFinite(col)) return null;
  const cs = plan.cell_size_m;
  const [x, y] = toCanvas(t, plan.height_m, col * cs, (row + 1) * cs);
  return { x, y, w: cs * t.scale, h: cs * t.scale };
}

export function headingTriangle(
  t: MapTransform,
  planH: number,
  x: number,
  y: number,
  headingRad: number,
  sizePx = 8,
): [number, number][] {
  const [cx, cy] = toCanvas(t, planH, x, y);
  // canvas angles mirror the y axis
  const a = -headingRad;
  const tip: [number, number] = [cx + Math.cos(a) * sizePx, cy + Math.sin(a) * sizePx];
  const left: [number, number] = [
    cx + Math.cos(a + 2.5) * sizePx * 0.7,
    cy + Math.sin(a + 2.5) * sizePx * 0.7,
  ];
  const right: [number, number] = [
    cx + Math.cos(a - 2.5) * sizePx * 0.7,
    cy + Math.sin(a - 2.5) * sizePx * 0.7,
  ];
  return [tip, left, right];
}
