// Payload shapes mirrored from the posekit service JSON contract.
// Field names are snake_case on purpose: they match the wire format
// byte for byte so no mapping layer is needed.

export type ParamType = "int" | "real" | "bool" | "string" | "path" | "enum";

export interface ParamSpec {
  name: string;
  type: ParamType;
  required: boolean;
  default: string | null;
  label: string;
  variants: string[];
}

export interface ProcessorManifest {
  id: string;
  category: string;
  input_kind: string;
  output_kind: string;
  exec: string | null;
  params: ParamSpec[];
}

export type Provenance = "annotated" | "interpolated" | "projected";

export interface AnnotationPoint {
  camera: string;
  frame: number;
  part: string;
  u: number;
  v: number;
  provenance: Provenance;
  residual: number;
}

export interface CameraInfo {
  name: string;
  stream: string;
  backend: string;
  dlt: number[] | null;
  width: number;
  height: number;
}

export interface Project {
  name: string;
  cameras: CameraInfo[];
  part_order: string[];
  /** (xmin, xmax, ymin, ymax) in arena units, or null when unset. */
  arena: number[] | null;
  walls_file: string;
  pipelines: string[];
}

export interface StageConfig {
  processor: string;
  params: Record<string, string>;
}

export interface PipelineConfigDto {
  name: string;
  source: string;
  sink: string;
  stages: StageConfig[];
}

// stage_index -1 means the problem is not tied to one stage.
export interface Diagnostic {
  stage_index: number;
  message: string;
}

export interface SavedPipeline {
  id: string;
  file: string;
  config: PipelineConfigDto;
  diagnostics: Diagnostic[];
}

export interface SaveResult {
  id: string;
  saved: boolean;
  diagnostics: Diagnostic[];
  /** Present only when saved. */
  file?: string;
}

export interface TableStats {
  columns: string[];
  rows: number;
}

export interface StageReport {
  index: number;
  processor: string;
  wall_time_s: number;
  items: number;
  artifact: string;
  input_stats: TableStats | null;
}

export interface RunReport {
  pipeline: string;
  workspace: string;
  stages: StageReport[];
}

export type RunStatus = "queued" | "running" | "done" | "failed";

export interface ApiErrorBody {
  code: string;
  message: string;
  detail: Record<string, unknown>;
}

export interface RunState {
  id: string;
  pipeline: string;
  status: RunStatus;
  report: RunReport | null;
  error: ApiErrorBody | null;
}

export interface ExportManifest {
  out_dir: string;
  manifest: Record<string, unknown>;
}
