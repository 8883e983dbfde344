// Helpers for rendering run artifacts. Artifacts are CSV text: pose files
// carry "#"-prefixed metadata lines before the header, analysis tables
// start directly with the header row. Cells never contain commas or
// quoting, so a plain split is exact.

export interface CsvTable {
  comments: string[];
  header: string[];
  rows: string[][];
}

export function parseCsv(text: string): CsvTable {
  const comments: string[] = [];
  const rows: string[][] = [];
  let header: string[] = [];
  let seenHeader = false;
  for (const line of text.split("\n")) {
    if (line === "") continue;
    if (line.startsWith("#")) {
      comments.push(line.slice(1).trim());
      continue;
    }
    if (!seenHeader) {
      header = line.split(",");
      seenHeader = true;
      continue;
    }
    rows.push(line.split(","));
  }
  return { comments, header, rows };
}

export function previewRows(table: CsvTable, limit: number): string[][] {
  return table.rows.slice(0, Math.max(0, limit));
}

export interface GridPreview {
  /** Lower bin edges along each axis, ascending. */
  xs: number[];
  ys: number[];
  /** values[i][j] is the bin at xs[i], ys[j]. */
  values: number[][];
  min: number;
  max: number;
}

/**
 * Reconstruct a 2D grid from the long-form one-row-per-bin layout
 * (columns x_lo, x_hi, y_lo, y_hi, value). Returns null when the table is
 * not in that layout, so callers can fall back to a plain row preview.
 */
export function gridFromTable(table: CsvTable): GridPreview | null {
  const need = ["x_lo", "y_lo", "value"];
  const at: Record<string, number> = {};
  for (const name of need) {
    const idx = table.header.indexOf(name);
    if (idx < 0) return null;
    at[name] = idx;
  }
  if (table.rows.length === 0) return null;

  const xs = distinctSorted(table.rows.map((r) => Number(r[at.x_lo])));
  const ys = distinctSorted(table.rows.map((r) => Number(r[at.y_lo])));
  const values = xs.map(() => ys.map(() => 0));
  let min = Infinity;
  let max = -Infinity;
  for (const row of table.rows) {
    const i = xs.indexOf(Number(row[at.x_lo]));
    const j = ys.indexOf(Number(row[at.y_lo]));
    const value = Number(row[at.value]);
    if (i < 0 || j < 0 || Number.isNaN(value)) return null;
    values[i][j] = value;
    min = Math.min(min, value);
    max = Math.max(max, value);
  }
  return { xs, ys, values, min, max };
}

function distinctSorted(nums: number[]): number[] {
  return [...new Set(nums)].sort((a, b) => a - b);
}

/**
 * Map a normalized value to a dark-blue-to-yellow ramp for heatmap cells.
 * Input is clamped to [0, 1].
 */
export function heatColor(t: number): string {
  const k = Math.min(Math.max(t, 0), 1);
  const r = Math.round(20 + 235 * k);
  const g = Math.round(24 + 200 * k);
  const b = Math.round(96 * (1 - k) + 40 * k);
  return `rgb(${r},${g},${b})`;
}
