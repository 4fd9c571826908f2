/** 2D layout of the airway tree for the canvas overview pane.
 *
 * Sites are projected orthographically onto the plane spanned by the two
 * highest-variance axes of the site cloud, then fitted into the canvas
 * with a uniform scale and a margin. Pure functions, no DOM.
 */

import type { TreeData } from "./types.js";

export interface LayoutPoint {
  id: number;
  x: number;
  y: number;
  branch: number;
}

export interface TreeLayout {
  points: LayoutPoint[];
  edges: [number, number][]; // indices into points (site ids)
  byId: Map<number, LayoutPoint>;
}

/** Pick the two coordinate axes with the largest spread. */
function dominantAxes(coords: number[][]): [number, number] {
  const spread = [0, 1, 2].map((k) => {
    const vals = coords.map((p) => p[k]);
    return Math.max(...vals) - Math.min(...vals);
  });
  const order = [0, 1, 2].sort((a, b) => spread[b] - spread[a]);
  return [order[0], order[1]];
}

export function layoutTree(
  tree: TreeData,
  width: number,
  height: number,
  margin = 12,
): TreeLayout {
  if (tree.sites.length === 0) {
    return { points: [], edges: [], byId: new Map() };
  }
  const coords = tree.sites.map((s) => s.position_mm as number[]);
  const [ax, ay] = dominantAxes(coords);
  const xs = coords.map((p) => p[ax]);
  const ys = coords.map((p) => p[ay]);
  const xMin = Math.min(...xs);
  const yMin = Math.min(...ys);
  const xSpan = Math.max(1e-9, Math.max(...xs) - xMin);
  const ySpan = Math.max(1e-9, Math.max(...ys) - yMin);
  const scale = Math.min(
    (width - 2 * margin) / xSpan,
    (height - 2 * margin) / ySpan,
  );
  const xOff = (width - xSpan * scale) / 2;
  const yOff = (height - ySpan * scale) / 2;

  const points = tree.sites.map((s, i) => ({
    id: s.id,
    x: xOff + (xs[i] - xMin) * scale,
    y: yOff + (ys[i] - yMin) * scale,
    branch: s.branch,
  }));
  const byId = new Map(points.map((p) => [p.id, p]));
  return { points, edges: tree.edges, byId };
}

/** Canvas position of the playback marker for a view site. */
export function markerPosition(
  layout: TreeLayout,
  siteId: number,
): { x: number; y: number } | null {
  const p = layout.byId.get(siteId);
  return p ? { x: p.x, y: p.y } : null;
}
