#!/usr/bin/env node
import { existsSync, mkdirSync, writeFileSync } from 'fs'
import { dirname } from 'path'
import {
  CsvError, EmptyInputError,
  loadHistory, loadReuse, loadScene, loadTiming, loadTrajectories,
} from './csv.js'
import { renderConvergence, renderReuse, renderTiming, renderTrajectories3d } from './kinds.js'

const KINDS = ['trajectories3d', 'convergence', 'timing', 'reuse'] as const
type Kind = (typeof KINDS)[number]

export interface Job {
  kind: Kind
  input: string
  output: string
  scene?: string
}

export function parseArgs(argv: string[]): Job {
  const opts = new Map<string, string>()
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i]
    const value = argv[i + 1]
    if (!flag.startsWith('--') || value === undefined) {
      throw new UsageError(`expected --flag value pairs, got ${JSON.stringify(argv[i])}`)
    }
    const name = flag.slice(2)
    if (!['kind', 'in', 'out', 'scene'].includes(name)) {
      throw new UsageError(`unknown flag --${name}`)
    }
    opts.set(name, value)
  }
  const kind = opts.get('kind')
  const input = opts.get('in')
  const output = opts.get('out')
  if (!kind || !input || !output) throw new UsageError('--kind, --in and --out are required')
  if (!(KINDS as readonly string[]).includes(kind)) {
    throw new UsageError(`--kind must be one of ${KINDS.join(', ')}`)
  }
  return { kind: kind as Kind, input, output, scene: opts.get('scene') }
}

export class UsageError extends Error {}

/** Render one job to an SVG string (pure in its input files). */
export function render(job: Job): string {
  switch (job.kind) {
    case 'trajectories3d': {
      const traj = loadTrajectories(job.input)
      const scene = job.scene && existsSync(job.scene) ? loadScene(job.scene) : null
      return renderTrajectories3d(traj, scene)
    }
    case 'convergence':
      return renderConvergence(loadHistory(job.input))
    case 'timing':
      return renderTiming(loadTiming(job.input))
    case 'reuse':
      return renderReuse(loadReuse(job.input))
  }
}

export function main(argv: string[]): number {
  let job: Job
  try {
    job = parseArgs(argv)
  } catch (e) {
    console.error(`usage error: ${(e as Error).message}`)
    console.error('usage: mfc-plot --kind trajectories3d|convergence|timing|reuse ' +
      '--in file.csv --out plot.svg [--scene scene.json]')
    return 2
  }
  try {
    if (!existsSync(job.input)) throw new Error(`input file not found: ${job.input}`)
    const svg = render(job)
    mkdirSync(dirname(job.output) || '.', { recursive: true })
    writeFileSync(job.output, svg)
    console.log(`wrote ${job.output}`)
    return 0
  } catch (e) {
    if (e instanceof CsvError || e instanceof EmptyInputError) {
      console.error(`input error: ${e.message}`)
    } else {
      console.error(`error: ${(e as Error).message}`)
    }
    return 1
  }
}

if (process.argv[1] && import.meta.url.endsWith(process.argv[1].split('/').pop()!)) {
  process.exit(main(process.argv.slice(2)))
}
