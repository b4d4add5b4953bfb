import { scaleLinear, scaleLog, type ScaleContinuousNumeric } from 'd3-scale'

export const WIDTH = 860
export const HEIGHT = 620
export const MARGIN = { top: 40, right: 30, bottom: 55, left: 75 }

export function esc(s: string): string {
  return s.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
}

export function el(tag: string, attrs: Record<string, string | number>, inner = ''): string {
  const a = Object.entries(attrs)
    .map(([k, v]) => ` ${k}="${typeof v === 'number' ? fmt(v) : esc(v)}"`)
    .join('')
  return inner === '' ? `<${tag}${a}/>` : `<${tag}${a}>${inner}</${tag}>`
}

function fmt(v: number): string {
  return Math.abs(v) < 1e-12 ? '0' : String(+v.toPrecision(6))
}

export function svgDocument(body: string, width = WIDTH, height = HEIGHT): string {
  return `<?xml version="1.0" encoding="UTF-8"?>\n` +
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
    `viewBox="0 0 ${width} ${height}" font-family="sans-serif" font-size="13">\n` +
    el('rect', { x: 0, y: 0, width, height, fill: 'white' }) + '\n' + body + '\n</svg>\n'
}

export function polyline(points: [number, number][], attrs: Record<string, string | number>): string {
  const d = points.map(([x, y], i) => `${i === 0 ? 'M' : 'L'}${fmt(x)},${fmt(y)}`).join('')
  return el('path', { d, fill: 'none', ...attrs })
}

export type Scale = ScaleContinuousNumeric<number, number>

export function linear(domain: [number, number], range: [number, number]): Scale {
  return scaleLinear().domain(domain).range(range).nice()
}

export function log10(domain: [number, number], range: [number, number]): Scale {
  const lo = Math.max(domain[0], 1e-300)
  return scaleLog().domain([lo, Math.max(domain[1], lo * 10)]).range(range)
}

/** Bottom and left axes with tick labels and optional axis titles. */
export function axes(x: Scale, y: Scale, xLabel: string, yLabel: string): string {
  const { top, right, bottom, left } = MARGIN
  const x0 = left, x1 = WIDTH - right, y0 = HEIGHT - bottom, y1 = top
  const parts: string[] = []
  parts.push(polyline([[x0, y0], [x1, y0]], { stroke: 'black', 'stroke-width': 1 }))
  parts.push(polyline([[x0, y0], [x0, y1]], { stroke: 'black', 'stroke-width': 1 }))
  for (const t of x.ticks(8)) {
    const px = x(t)
    parts.push(polyline([[px, y0], [px, y0 + 5]], { stroke: 'black', 'stroke-width': 1 }))
    parts.push(el('text', { x: px, y: y0 + 20, 'text-anchor': 'middle' }, esc(tickLabel(t))))
  }
  for (const t of y.ticks(8)) {
    const py = y(t)
    parts.push(polyline([[x0 - 5, py], [x0, py]], { stroke: 'black', 'stroke-width': 1 }))
    parts.push(el('text', { x: x0 - 9, y: py + 4, 'text-anchor': 'end' }, esc(tickLabel(t))))
  }
  parts.push(el('text', { x: (x0 + x1) / 2, y: HEIGHT - 12, 'text-anchor': 'middle' }, esc(xLabel)))
  parts.push(el('text', {
    x: 18, y: (y0 + y1) / 2, 'text-anchor': 'middle',
    transform: `rotate(-90 18 ${(y0 + y1) / 2})`,
  }, esc(yLabel)))
  return parts.join('\n')
}

function tickLabel(t: number): string {
  if (t !== 0 && (Math.abs(t) >= 1e4 || Math.abs(t) < 1e-3)) return t.toExponential(0)
  return String(+t.toPrecision(4))
}

export function legend(entries: [string, string][], x: number, y: number): string {
  return entries.map(([label, color], i) =>
    polyline([[x, y + 18 * i], [x + 24, y + 18 * i]], { stroke: color, 'stroke-width': 2.5 }) +
    el('text', { x: x + 30, y: y + 18 * i + 4 }, esc(label)),
  ).join('\n')
}

export const SERIES_COLORS = ['#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd']
