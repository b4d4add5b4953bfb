import { extent } from 'd3-array'
import type { HistorySeries, ReuseRows, Scene, TimingSeries, Trajectories } from './csv.js'
import {
  HEIGHT, MARGIN, SERIES_COLORS, WIDTH,
  axes, el, legend, linear, log10, polyline, svgDocument,
} from './svg.js'

/** Isometric projection used for the 3-D trajectory fans. */
function iso([x, y, z]: number[]): [number, number] {
  const c = Math.cos(Math.PI / 6)
  const s = Math.sin(Math.PI / 6)
  return [(x - y) * c, (x + y) * s - z]
}

function boxCorners(lo: number[], hi: number[]): number[][] {
  const out: number[][] = []
  for (const x of [lo[0], hi[0]])
    for (const y of [lo[1], hi[1]])
      for (const z of [lo[2], hi[2]]) out.push([x, y, z])
  return out
}

// edges of a box as corner-index pairs (corners ordered by the loop above)
const BOX_EDGES: [number, number][] = [
  [0, 1], [2, 3], [4, 5], [6, 7],
  [0, 2], [1, 3], [4, 6], [5, 7],
  [0, 4], [1, 5], [2, 6], [3, 7],
]

export function renderTrajectories3d(traj: Trajectories, scene: Scene | null): string {
  const projected = traj.agents.map((pts) => pts.map(iso))
  const all: [number, number][] = projected.flat()
  if (scene) {
    for (const b of scene.obstacles) for (const c of boxCorners(b.lo, b.hi)) all.push(iso(c))
    if (scene.target) all.push(iso(scene.target))
  }
  const [ux0, ux1] = extent(all, (p) => p[0]) as [number, number]
  const [uy0, uy1] = extent(all, (p) => p[1]) as [number, number]
  const pad = 0.05 * Math.max(ux1 - ux0, uy1 - uy0, 1e-9)
  const sx = linear([ux0 - pad, ux1 + pad], [MARGIN.left, WIDTH - MARGIN.right])
  const sy = linear([uy0 - pad, uy1 + pad], [HEIGHT - MARGIN.bottom, MARGIN.top])
  const P = (p: [number, number]): [number, number] => [sx(p[0]), sy(p[1])]

  const parts: string[] = []
  if (scene) {
    for (const b of scene.obstacles) {
      const corners = boxCorners(b.lo, b.hi).map(iso).map(P)
      const cx = corners.reduce((a, p) => a + p[0], 0) / 8
      const cy = corners.reduce((a, p) => a + p[1], 0) / 8
      const hull = [...corners].sort((p, q) =>
        Math.atan2(p[1] - cy, p[0] - cx) - Math.atan2(q[1] - cy, q[0] - cx))
      parts.push(polyline([...hull, hull[0]], {
        stroke: 'none', fill: '#888888', 'fill-opacity': 0.18,
      }).replace('fill="none" ', ''))
      for (const [i, j] of BOX_EDGES) {
        parts.push(polyline([corners[i], corners[j]], {
          stroke: '#666666', 'stroke-width': 1, 'stroke-opacity': 0.6,
        }))
      }
    }
  }
  projected.forEach((pts, i) => {
    const color = SERIES_COLORS[i % SERIES_COLORS.length]
    parts.push(polyline(pts.map(P), { stroke: color, 'stroke-width': 1, 'stroke-opacity': 0.55 }))
    const [x0, y0] = P(pts[0])
    parts.push(el('circle', { cx: x0, cy: y0, r: 2.2, fill: color, 'fill-opacity': 0.8 }))
  })
  if (scene?.target) {
    const [tx, ty] = P(iso(scene.target))
    const r = 9
    parts.push(polyline([[tx - r, ty - r], [tx + r, ty + r]], { stroke: 'black', 'stroke-width': 3.5 }))
    parts.push(polyline([[tx - r, ty + r], [tx + r, ty - r]], { stroke: 'black', 'stroke-width': 3.5 }))
  }
  parts.push(el('text', { x: WIDTH / 2, y: 24, 'text-anchor': 'middle', 'font-size': 16 },
    `Swarm trajectories (${traj.agents.length} agents)`))
  return svgDocument(parts.join('\n'))
}

export function renderConvergence(h: HistorySeries): string {
  const series: [string, number[]][] = [
    ['primal gradient norm', h.primal],
    ['dual residual (max node)', h.dual],
    ['population objective gradient', h.jrGrad],
  ]
  const finite = series.flatMap(([, v]) => v).filter((v) => Number.isFinite(v) && v > 0)
  const lo = Math.min(...finite)
  const hi = Math.max(...finite)
  const x = linear([0, Math.max(...h.iter, 1)], [MARGIN.left, WIDTH - MARGIN.right])
  const y = log10([lo, hi], [HEIGHT - MARGIN.bottom, MARGIN.top])
  const parts: string[] = [axes(x, y, 'outer iteration', 'criterion value (log scale)')]
  series.forEach(([label, vals], i) => {
    const pts = h.iter
      .map((it, k) => [it, vals[k]] as [number, number])
      .filter(([, v]) => Number.isFinite(v) && v > 0)
      .map(([it, v]) => [x(it), y(v)] as [number, number])
    if (pts.length > 0) {
      parts.push(polyline(pts, { stroke: SERIES_COLORS[i], 'stroke-width': 2 }))
    }
  })
  parts.push(legend(series.map(([label], i) => [label, SERIES_COLORS[i]]),
    WIDTH - 330, MARGIN.top + 10))
  parts.push(el('text', { x: WIDTH / 2, y: 24, 'text-anchor': 'middle', 'font-size': 16 },
    'Stopping-criterion history'))
  return svgDocument(parts.join('\n'))
}

export function renderTiming(series: TimingSeries[]): string {
  const allN = series.flatMap((s) => s.N)
  const allT = series.flatMap((s) => s.seconds).filter((v) => v > 0)
  const x = log10([Math.min(...allN), Math.max(...allN)], [MARGIN.left, WIDTH - MARGIN.right])
  const y = log10([Math.min(...allT), Math.max(...allT)], [HEIGHT - MARGIN.bottom, MARGIN.top])
  const parts: string[] = [axes(x, y, 'agents N (log scale)', 'seconds per evaluation (log scale)')]
  series.forEach((s, i) => {
    const pts = s.N.map((n, k) => [x(n), y(Math.max(s.seconds[k], 1e-300))] as [number, number])
    parts.push(polyline(pts, { stroke: SERIES_COLORS[i], 'stroke-width': 2 }))
    for (const [px, py] of pts) {
      parts.push(el('circle', { cx: px, cy: py, r: 3, fill: SERIES_COLORS[i] }))
    }
  })
  parts.push(legend(series.map((s, i) => [s.method, SERIES_COLORS[i]] as [string, string]),
    MARGIN.left + 20, MARGIN.top + 10))
  parts.push(el('text', { x: WIDTH / 2, y: 24, 'text-anchor': 'middle', 'font-size': 16 },
    'Interaction-cost scaling'))
  return svgDocument(parts.join('\n'))
}

export function renderReuse(r: ReuseRows): string {
  const x = linear([0, Math.max(...r.sourceN) * 1.1], [MARGIN.left, WIDTH - MARGIN.right])
  const hiY = Math.max(...r.trajDiff, ...r.coeffDiff, 1e-6)
  const y = linear([0, hiY * 1.15], [HEIGHT - MARGIN.bottom, MARGIN.top])
  const parts: string[] = [axes(x, y, 'agents used to fit the coefficients', 'relative difference')]
  const order = r.sourceN.map((_, i) => i).sort((a, b) => r.sourceN[a] - r.sourceN[b])
  const seriesDefs: [string, number[]][] = [
    ['trajectories', r.trajDiff],
    ['coefficients', r.coeffDiff],
  ]
  seriesDefs.forEach(([label, vals], i) => {
    const pts = order.map((k) => [x(r.sourceN[k]), y(vals[k])] as [number, number])
    parts.push(polyline(pts, { stroke: SERIES_COLORS[i], 'stroke-width': 2 }))
    order.forEach((k, j) => {
      parts.push(el('circle', { cx: pts[j][0], cy: pts[j][1], r: 4, fill: SERIES_COLORS[i] }))
      if (i === 0) {
        parts.push(el('text', {
          x: pts[j][0], y: pts[j][1] - 10, 'text-anchor': 'middle', 'font-size': 11,
        }, (+vals[k].toPrecision(3)).toString()))
      }
    })
  })
  parts.push(legend(seriesDefs.map(([label], i) => [label, SERIES_COLORS[i]] as [string, string]),
    WIDTH - 220, MARGIN.top + 10))
  parts.push(el('text', { x: WIDTH / 2, y: 24, 'text-anchor': 'middle', 'font-size': 16 },
    'Coefficient reuse vs reference population'))
  return svgDocument(parts.join('\n'))
}
