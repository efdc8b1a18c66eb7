/** Traffic-matrix model: src prefixes on x, dst prefixes on y, the color
 * channel carrying the counter normalized by the number of addresses the
 * cell spans (counter / 2^(32-src_mask) / 2^(32-dst_mask)).
 */

import { Counter, ResultRow } from "./types";

export interface HeatCell {
  src: string;
  dst: string;
  srcMask: number;
  dstMask: number;
  raw: number;
  normalized: number;
}

export interface HeatmapModel {
  srcLabels: string[];
  dstLabels: string[];
  cells: HeatCell[];
  maxNormalized: number;
}

const COUNTER_FIELD: Record<Counter, "flows" | "packets" | "bytes"> = {
  flow: "flows",
  packet: "packets",
  byte: "bytes",
};

function parseComponent(part: string): { label: string; mask: number } {
  if (part === "ANY") return { label: "ANY", mask: 0 };
  const [value, mask] = part.split("|");
  return { label: `${value}/${mask}`, mask: Number(mask) };
}

export function normalizeCell(raw: number, srcMask: number, dstMask: number): number {
  return raw / Math.pow(2, 32 - srcMask) / Math.pow(2, 32 - dstMask);
}

/** Rows from a src_ip x dst_ip query become a dense-labelled sparse grid. */
export function buildHeatmap(rows: ResultRow[], counter: Counter): HeatmapModel {
  const field = COUNTER_FIELD[counter];
  const cells: HeatCell[] = [];
  const srcLabels = new Set<string>();
  const dstLabels = new Set<string>();
  for (const row of rows) {
    const parts = row.key.split(",");
    if (parts.length !== 2) continue; // needs exactly src_ip,dst_ip keys
    const src = parseComponent(parts[0]);
    const dst = parseComponent(parts[1]);
    const raw = row[field];
    const cell: HeatCell = {
      src: src.label,
      dst: dst.label,
      srcMask: src.mask,
      dstMask: dst.mask,
      raw,
      normalized: normalizeCell(raw, src.mask, dst.mask),
    };
    cells.push(cell);
    srcLabels.add(cell.src);
    dstLabels.add(cell.dst);
  }
  let max = 0;
  for (const cell of cells) max = Math.max(max, cell.normalized);
  return {
    srcLabels: [...srcLabels].sort(),
    dstLabels: [...dstLabels].sort(),
    cells,
    maxNormalized: max,
  };
}
