/** Typed API client with a request log and per-panel cancellation. */

import { QueryResponse } from "./types";

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
    public line?: number,
    public col?: number,
  ) {
    super(message);
  }
}

export class ApiClient {
  /** Every issued request URL, in order; the UI contract tests read this. */
  readonly requestLog: string[] = [];

  constructor(
    private base: string = "",
    private fetchLike: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async get(path: string, signal?: AbortSignal): Promise<Response> {
    const url = this.base + path;
    this.requestLog.push(url);
    const res = await this.fetchLike(url, { signal });
    if (!res.ok) {
      let message = `HTTP ${res.status}`;
      let line: number | undefined;
      let col: number | undefined;
      try {
        const body = await res.json();
        message = body.error ?? message;
        line = body.line;
        col = body.col;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, message, line, col);
    }
    return res;
  }

  async query(q: string, signal?: AbortSignal): Promise<QueryResponse> {
    const res = await this.get(`/api/v1/query?q=${encodeURIComponent(q)}`, signal);
    return (await res.json()) as QueryResponse;
  }

  async explain(q: string, signal?: AbortSignal): Promise<string> {
    const res = await this.get(`/api/v1/explain?q=${encodeURIComponent(q)}`, signal);
    return await res.text();
  }

  async sites(): Promise<number[]> {
    const res = await this.get("/api/v1/sites");
    return ((await res.json()) as { sites: number[] }).sites;
  }

  async meta(): Promise<Record<string, unknown>> {
    const res = await this.get("/api/v1/meta");
    return (await res.json()) as Record<string, unknown>;
  }
}

/** One in-flight query per panel: a newer submission cancels the stale one. */
export class PanelRunner {
  private controller: AbortController | null = null;

  constructor(private client: ApiClient) {}

  async run(q: string): Promise<QueryResponse> {
    this.cancel();
    this.controller = new AbortController();
    try {
      return await this.client.query(q, this.controller.signal);
    } finally {
      this.controller = null;
    }
  }

  cancel(): void {
    if (this.controller) {
      this.controller.abort();
      this.controller = null;
    }
  }

  get busy(): boolean {
    return this.controller !== null;
  }
}
