import { readFileSync } from 'fs'

/** Parse failure that names the offending file and row. */
export class CsvError extends Error {
  constructor(file: string, row: number, detail: string) {
    super(`${file}:${row}: ${detail}`)
    this.name = 'CsvError'
  }
}

/** A syntactically valid file with no data rows. */
export class EmptyInputError extends Error {
  constructor(file: string) {
    super(`${file}: no data rows`)
    this.name = 'EmptyInputError'
  }
}

export interface Table {
  file: string
  columns: string[]
  /** Row-major cells; numeric columns parsed, others kept as strings. */
  rows: (number | string)[][]
}

/**
 * Read a comma-separated table. Every row must match the header width;
 * cells in `stringColumns` stay strings, everything else must parse as a
 * finite number.
 */
export function readTable(file: string, stringColumns: string[] = []): Table {
  const text = readFileSync(file, 'utf8')
  const lines = text.split('\n').map((l) => l.trim()).filter((l) => l.length > 0)
  if (lines.length === 0) throw new EmptyInputError(file)
  const columns = lines[0].split(',').map((c) => c.trim())
  if (lines.length === 1) throw new EmptyInputError(file)
  const keepString = new Set(stringColumns)
  const rows: (number | string)[][] = []
  for (let i = 1; i < lines.length; i++) {
    const parts = lines[i].split(',')
    if (parts.length !== columns.length) {
      throw new CsvError(file, i + 1, `expected ${columns.length} cells, got ${parts.length}`)
    }
    rows.push(parts.map((cell, j) => {
      if (keepString.has(columns[j])) return cell.trim()
      const v = Number(cell)
      if (!Number.isFinite(v)) {
        throw new CsvError(file, i + 1, `column ${columns[j]}: ${JSON.stringify(cell.trim())} is not a finite number`)
      }
      return v
    }))
  }
  return { file, columns, rows }
}

export function requireColumns(table: Table, needed: string[]): void {
  for (const c of needed) {
    if (!table.columns.includes(c)) {
      throw new CsvError(table.file, 1, `missing required column ${JSON.stringify(c)}`)
    }
  }
}

export function column(table: Table, name: string): number[] {
  const j = table.columns.indexOf(name)
  return table.rows.map((r) => r[j] as number)
}

export function stringColumn(table: Table, name: string): string[] {
  const j = table.columns.indexOf(name)
  return table.rows.map((r) => String(r[j]))
}

// ---------------------------------------------------------------------------
// Artifact-specific loaders
// ---------------------------------------------------------------------------

export interface Trajectories {
  /** One polyline of [x, y, z] points per agent, in node order. */
  agents: number[][][]
}

/** trajectories.csv: agent,t,x,y,z,... one row per (agent, node). */
export function loadTrajectories(file: string): Trajectories {
  const table = readTable(file)
  requireColumns(table, ['agent', 't', 'x', 'y', 'z'])
  const byAgent = new Map<number, { t: number; p: number[] }[]>()
  const [ia, it, ix, iy, iz] = ['agent', 't', 'x', 'y', 'z'].map((c) =>
    table.columns.indexOf(c))
  for (const row of table.rows) {
    const a = row[ia] as number
    if (!byAgent.has(a)) byAgent.set(a, [])
    byAgent.get(a)!.push({
      t: row[it] as number,
      p: [row[ix] as number, row[iy] as number, row[iz] as number],
    })
  }
  const agents = [...byAgent.entries()]
    .sort((u, v) => u[0] - v[0])
    .map(([, pts]) => pts.sort((u, v) => u.t - v.t).map((q) => q.p))
  return { agents }
}

export interface HistorySeries {
  iter: number[]
  primal: number[]
  dual: number[]
  jrGrad: number[]
}

/** history.csv: the per-iteration stopping-criterion norms of a solve. */
export function loadHistory(file: string): HistorySeries {
  const table = readTable(file)
  requireColumns(table, ['iter', 'primal_grad_norm', 'dual_residual_max', 'Jr_grad_norm'])
  return {
    iter: column(table, 'iter'),
    primal: column(table, 'primal_grad_norm'),
    dual: column(table, 'dual_residual_max'),
    jrGrad: column(table, 'Jr_grad_norm'),
  }
}

export interface TimingSeries {
  method: string
  N: number[]
  seconds: number[]
}

/** bench_interaction.csv: method,N,seconds grouped by method. */
export function loadTiming(file: string): TimingSeries[] {
  const table = readTable(file, ['method'])
  requireColumns(table, ['method', 'N', 'seconds'])
  const methods = [...new Set(stringColumn(table, 'method'))]
  const im = table.columns.indexOf('method')
  return methods.map((m) => {
    const rows = table.rows.filter((r) => r[im] === m)
    const iN = table.columns.indexOf('N')
    const is = table.columns.indexOf('seconds')
    const order = rows.map((_, i) => i).sort((a, b) => (rows[a][iN] as number) - (rows[b][iN] as number))
    return {
      method: m,
      N: order.map((i) => rows[i][iN] as number),
      seconds: order.map((i) => rows[i][is] as number),
    }
  })
}

export interface ReuseRows {
  sourceN: number[]
  trajDiff: number[]
  coeffDiff: number[]
}

/** reuse.csv: coefficient-transfer quality per source population size. */
export function loadReuse(file: string): ReuseRows {
  const table = readTable(file)
  requireColumns(table, ['source_N', 'eval_N', 'rel_traj_diff', 'rel_coeff_diff'])
  return {
    sourceN: column(table, 'source_N'),
    trajDiff: column(table, 'rel_traj_diff'),
    coeffDiff: column(table, 'rel_coeff_diff'),
  }
}

export interface Scene {
  target?: number[]
  obstacles: { lo: number[]; hi: number[] }[]
}

/** scene.json sidecar: target marker position and obstacle boxes. */
export function loadScene(file: string): Scene {
  const doc = JSON.parse(readFileSync(file, 'utf8'))
  return {
    target: Array.isArray(doc.target) ? doc.target.map(Number) : undefined,
    obstacles: Array.isArray(doc.obstacles)
      ? doc.obstacles.map((b: { lo: number[]; hi: number[] }) => ({
          lo: b.lo.map(Number),
          hi: b.hi.map(Number),
        }))
      : [],
  }
}
