/** Typed client for the metasieve run service. All numbers shown anywhere in
 * the UI come from these payloads; the client never recomputes them. */

export interface RunSummary {
  run_id: string;
  state: string;
  query: string;
  revision: number;
  corpus_ref: string;
}

export interface RunListPayload {
  runs: RunSummary[];
}

export interface RulePayload {
  rule_id: string;
  text: string;
  kind: string;
}

export interface RuleSetPayload {
  revision: number;
  status: string;
  rules: RulePayload[];
}

export interface PrismaStagePayload {
  label: string;
  remaining: number;
  excluded: number;
}

export interface PrismaFlowPayload {
  initial_count: number;
  stages: PrismaStagePayload[];
  final_count: number;
}

export interface AuditEventPayload {
  run_id: string;
  sequence: number;
  kind: string;
  payload: Record<string, unknown>;
  timestamp: string;
}

export interface AuditTrailPayload {
  events: AuditEventPayload[];
}

export interface RunDocument {
  run_id: string;
  state: string;
  query: string;
  corpus_ref: string;
  parser_spec: string;
  rule_set: RuleSetPayload | null;
  plan_set: unknown;
  lists: Record<string, { file: string; key: string }>;
  flow: PrismaFlowPayload | null;
  selected: string[] | null;
  penalties: Record<string, number> | null;
  severity_total: number | null;
}

export interface WeightRowPayload {
  study_id: string;
  penalty: number;
  compatibility: number;
  score: number;
  weight: number;
}

export interface WeightVectorPayload {
  gamma: number;
  floor: number;
  pmax_mode: string;
  pmax: number;
  studies: WeightRowPayload[];
}

export interface StudyEstimatePayload {
  study_id: string;
  rr: number | null;
  rr_ci_low: number | null;
  rr_ci_high: number | null;
  display_weight_percent: number;
  weight: number;
  zero_cell: boolean;
}

export interface PooledEstimatePayload {
  theta_hat: number;
  log_theta: number;
  variance: number;
  ci_low: number;
  ci_high: number;
  level: number;
  studies: StudyEstimatePayload[];
}

export interface ForestStudyPayload {
  study_id: string;
  rr: number | null;
  ci_low: number | null;
  ci_high: number | null;
  classical_weight_percent: number;
  weighted_weight_percent: number;
}

export interface ForestPooledPayload {
  label: string;
  theta: number;
  ci_low: number;
  ci_high: number;
}

export interface ForestPayload {
  studies: ForestStudyPayload[];
  pooled: ForestPooledPayload[];
}

export interface MetaPayload {
  classical: PooledEstimatePayload;
  weighted: PooledEstimatePayload;
  weight_vector: WeightVectorPayload | null;
  forest: ForestPayload;
}

export interface ExecutePayload {
  flow: PrismaFlowPayload;
  selected: string[];
  summaries: unknown;
}

export interface WeightRequest {
  gamma?: number;
  floor?: number;
  pmax_mode?: string;
  pmax_total?: number;
  explicit_pmax?: number;
  penalties?: Record<string, number>;
}

export interface MetaRequest extends WeightRequest {
  weights?: Record<string, number> | "uniform";
  level?: number;
  correct_zeros?: boolean;
}

export interface RulesAction {
  action: "edit" | "approve";
  rules?: string[];
}

export interface CreateRunRequest {
  run_id?: string;
  query: string;
  corpus: string;
  parser?: string;
  plans?: unknown;
  lists?: Record<string, { file: string; key: string }>;
  rules?: string[];
}

export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;
  readonly pointer?: string;

  constructor(status: number, detail: string, pointer?: string) {
    super(pointer ? `${detail} (${pointer})` : detail);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
    this.pointer = pointer;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl = "", fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => globalThis.fetch(input, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.baseUrl + path, init);
    const text = await response.text();
    let data: unknown = null;
    if (text) {
      try {
        data = JSON.parse(text);
      } catch {
        throw new ApiError(response.status, `non-JSON response from ${path}`);
      }
    }
    if (!response.ok) {
      const record = (data ?? {}) as { detail?: string; pointer?: string };
      throw new ApiError(
        response.status,
        record.detail ?? `request to ${path} failed with ${response.status}`,
        record.pointer,
      );
    }
    return data as T;
  }

  listRuns(): Promise<RunListPayload> {
    return this.request("GET", "/runs");
  }

  createRun(body: CreateRunRequest): Promise<RunDocument> {
    return this.request("POST", "/runs", body);
  }

  getRun(runId: string): Promise<RunDocument> {
    return this.request("GET", `/runs/${runId}`);
  }

  putRules(runId: string, body: RulesAction): Promise<RuleSetPayload> {
    return this.request("PUT", `/runs/${runId}/rules`, body);
  }

  execute(runId: string): Promise<ExecutePayload> {
    return this.request("POST", `/runs/${runId}/execute`);
  }

  getPrisma(runId: string): Promise<PrismaFlowPayload> {
    return this.request("GET", `/runs/${runId}/prisma`);
  }

  getAudit(runId: string): Promise<AuditTrailPayload> {
    return this.request("GET", `/runs/${runId}/audit`);
  }

  postWeights(runId: string, body: WeightRequest): Promise<WeightVectorPayload> {
    return this.request("POST", `/runs/${runId}/weights`, body);
  }

  postMeta(runId: string, body: MetaRequest): Promise<MetaPayload> {
    return this.request("POST", `/runs/${runId}/meta`, body);
  }
}
