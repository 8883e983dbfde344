import { ApiClient } from "./api";
import { formFromManifest, formValues, withFieldValue, type FormModel } from "./schemaForm";
import type {
  Diagnostic,
  PipelineConfigDto,
  ProcessorManifest,
  RunState,
  SaveResult,
} from "./types";

export interface StageCard {
  manifest: ProcessorManifest;
  form: FormModel;
}

/**
 * An editable pipeline: endpoint paths plus an ordered list of stage
 * cards. Each card is one processor from the registry with its param
 * form. The draft does no validation of its own; the service owns the
 * rules and reports diagnostics on save.
 */
export class PipelineDraft {
  name: string;
  source = "";
  sink = "";

  private readonly registry: ProcessorManifest[];
  private stages: StageCard[] = [];

  constructor(registry: ProcessorManifest[], name = "untitled") {
    this.registry = registry;
    this.name = name;
  }

  /** Rebuild a draft from a saved config, prefilling forms with its params. */
  static fromConfig(registry: ProcessorManifest[], config: PipelineConfigDto): PipelineDraft {
    const draft = new PipelineDraft(registry, config.name);
    draft.source = config.source;
    draft.sink = config.sink;
    for (const stage of config.stages) {
      const at = draft.addStage(stage.processor);
      for (const [key, value] of Object.entries(stage.params)) {
        draft.setParam(at, key, value);
      }
    }
    return draft;
  }

  /** Processors offered by the palette, grouped by category then id. */
  palette(): ProcessorManifest[] {
    return [...this.registry].sort((a, b) =>
      a.category === b.category ? cmp(a.id, b.id) : cmp(a.category, b.category),
    );
  }

  manifestFor(processorId: string): ProcessorManifest | undefined {
    return this.registry.find((m) => m.id === processorId);
  }

  stageCards(): readonly StageCard[] {
    return this.stages;
  }

  /** Insert a stage for the given processor; returns its index. */
  addStage(processorId: string, at?: number): number {
    const manifest = this.manifestFor(processorId);
    if (manifest === undefined) {
      throw new Error(`unknown processor: ${processorId}`);
    }
    const card: StageCard = { manifest, form: formFromManifest(manifest) };
    const index = at === undefined ? this.stages.length : clampIndex(at, this.stages.length);
    this.stages.splice(index, 0, card);
    return index;
  }

  removeStage(index: number): void {
    this.stages.splice(index, 1);
  }

  moveStage(from: number, to: number): void {
    if (from < 0 || from >= this.stages.length) return;
    const [card] = this.stages.splice(from, 1);
    this.stages.splice(clampIndex(to, this.stages.length), 0, card);
  }

  setParam(index: number, name: string, value: string): void {
    const card = this.stages[index];
    if (card === undefined) return;
    this.stages[index] = { ...card, form: withFieldValue(card.form, name, value) };
  }

  toConfig(): PipelineConfigDto {
    return {
      name: this.name,
      source: this.source,
      sink: this.sink,
      stages: this.stages.map((card) => ({
        processor: card.manifest.id,
        params: formValues(card.form),
      })),
    };
  }

  save(api: ApiClient, id: string): Promise<SaveResult> {
    return api.savePipeline(id, this.toConfig());
  }
}

function clampIndex(at: number, length: number): number {
  return Math.min(Math.max(at, 0), length);
}

function cmp(a: string, b: string): number {
  return a < b ? -1 : a > b ? 1 : 0;
}

/**
 * Bucket service diagnostics by the stage card they belong to. Index -1
 * collects pipeline-level problems (bad endpoints, kind breaks reported
 * without a stage).
 */
export function groupDiagnostics(diagnostics: Diagnostic[]): Map<number, string[]> {
  const grouped = new Map<number, string[]>();
  for (const d of diagnostics) {
    const bucket = grouped.get(d.stage_index);
    if (bucket === undefined) {
      grouped.set(d.stage_index, [d.message]);
    } else {
      bucket.push(d.message);
    }
  }
  return grouped;
}

export type Sleep = (ms: number) => Promise<void>;

const realSleep: Sleep = (ms) => new Promise((resolve) => setTimeout(resolve, ms));

/**
 * Submit a run and poll it to completion. Single-user tool, so plain
 * polling is fine; the sleep hook exists for tests.
 */
export class RunMonitor {
  private readonly api: ApiClient;
  private readonly intervalMs: number;
  private readonly maxPolls: number;
  private readonly sleep: Sleep;

  constructor(
    api: ApiClient,
    opts?: { intervalMs?: number; maxPolls?: number; sleep?: Sleep },
  ) {
    this.api = api;
    this.intervalMs = opts?.intervalMs ?? 500;
    this.maxPolls = opts?.maxPolls ?? 2400;
    this.sleep = opts?.sleep ?? realSleep;
  }

  async run(pipelineId: string, onUpdate?: (state: RunState) => void): Promise<RunState> {
    const submitted = await this.api.submitRun(pipelineId);
    let state = await this.api.getRun(submitted.run_id);
    onUpdate?.(state);
    let polls = 0;
    while (state.status === "queued" || state.status === "running") {
      if (polls >= this.maxPolls) {
        throw new Error(`run ${submitted.run_id} still ${state.status} after ${polls} polls`);
      }
      await this.sleep(this.intervalMs);
      state = await this.api.getRun(submitted.run_id);
      onUpdate?.(state);
      polls += 1;
    }
    return state;
  }
}
