/** Shared types mirroring the HTTP API payloads. */

export interface ResultRow {
  bin: number;
  site: string;
  key: string;
  flows: number;
  packets: number;
  bytes: number;
  exact: boolean;
}

export interface QueryMeta {
  elapsed_ms: number;
  rows: number;
  counter: string;
  trees_fetched: number;
  merges: number;
  truncated: boolean;
  warnings: string[];
}

export interface QueryResponse {
  rows: ResultRow[];
  meta: QueryMeta;
}

export type SelectKind = "pop" | "top" | "hhh" | "hc" | "above" | "*";
export type Counter = "flow" | "packet" | "byte";
export type ProtoScope = "any" | "tcp" | "udp";

export type FeatureName = "src_ip" | "dst_ip" | "src_port" | "dst_port";

export interface TimeRange {
  /** "YYYY-MM-DD hh:mm", minute-inclusive on both ends */
  from: string;
  to: string;
}

export interface FormState {
  kind: SelectKind;
  k?: number; // top/hc
  threshold?: number; // above
  percent?: number; // hhh
  counter: Counter;
  proto: ProtoScope;
  binMinutes?: number;
  ranges: TimeRange[];
  /** "ANY", a site id, "ITR", or "ITR-x|n" */
  site: string;
  /** feature -> "ANY" or "value|mask"; absent features are not named */
  features: Partial<Record<FeatureName, string>>;
}

export type ViewMode = "timeseries" | "table" | "heatmap";

export interface ViewModel {
  query: string;
  mode: ViewMode;
  rows: ResultRow[];
  meta: QueryMeta;
  /** display-level filter from a key drill-down; rendering-only */
  targetLevel?: number;
}

export interface Crumb {
  query: string;
  mode: ViewMode;
  targetLevel?: number;
}
