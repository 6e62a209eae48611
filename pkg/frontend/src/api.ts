/** Typed client for the annotation service HTTP API. */

export interface TaskItem {
  pair_id: string;
  query: string;
  candidate: string;
  query_image: string | null;
  candidate_image: string | null;
}

export interface ProgressSnapshot {
  total_pairs: number;
  fully_reviewed: number;
  per_expert_done: Record<string, number>;
  positives_so_far: number;
  running_p_k: number;
  p_k_defined: boolean;
}

export interface Meta {
  experts: string[];
  total_pairs: number;
  k: number;
  generators: string[];
  models: string[];
}

export type VoteLabel = 0 | 1;

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** The slice of the service API the card queue depends on. */
export interface AnnotatorApi {
  tasks(expert: string, n: number): Promise<TaskItem[]>;
  vote(pairId: string, expert: string, label: VoteLabel): Promise<ProgressSnapshot>;
  progress(): Promise<ProgressSnapshot>;
}

export class ApiClient implements AnnotatorApi {
  private readonly fetchImpl: FetchLike;

  constructor(readonly baseUrl: string = "", fetchImpl?: FetchLike) {
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, init);
    if (!res.ok) {
      let detail = `${res.status} ${res.statusText}`;
      try {
        const body = (await res.json()) as { detail?: unknown };
        if (typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  meta(): Promise<Meta> {
    return this.request<Meta>("/api/meta");
  }

  async tasks(expert: string, n: number): Promise<TaskItem[]> {
    const params = new URLSearchParams({ expert, n: String(n) });
    const body = await this.request<{ tasks: TaskItem[] }>(`/api/tasks?${params}`);
    return body.tasks;
  }

  async vote(pairId: string, expert: string, label: VoteLabel): Promise<ProgressSnapshot> {
    const body = await this.request<{ ok: boolean; progress: ProgressSnapshot }>("/api/votes", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ pair_id: pairId, expert, label }),
    });
    return body.progress;
  }

  progress(): Promise<ProgressSnapshot> {
    return this.request<ProgressSnapshot>("/api/progress");
  }

  resolve(out?: string): Promise<{ path: string; rows: number }> {
    return this.request<{ path: string; rows: number }>("/api/resolve", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(out ? { out } : {}),
    });
  }
}
