// Wire types mirroring the session-service JSON API.

export interface ViewPoint {
  sample_id: number;
  x: number;
  y: number;
  cluster: number;
  predicted_class: number | null;
  is_query: boolean;
  is_support: boolean;
}

export interface ClusterMean {
  cluster: number;
  x: number;
  y: number;
  class_id: number | null;
}

export type SessionStatus = "awaiting_labels" | "complete";

export interface ViewPayload {
  session_id: string;
  status: SessionStatus;
  points: ViewPoint[];
  cluster_means: ClusterMean[];
  class_names: string[];
  pending_queries: number[];
  projection_fallback: boolean;
}

export interface SectionPayload {
  x: number[][];
  y?: number[];
}

export interface CreateSessionRequest {
  acquisition?: string;
  seed?: number;
  max_iters?: number;
  way?: number;
  task?: {
    support: SectionPayload;
    unlabeled?: SectionPayload;
    query?: SectionPayload;
  };
  task_file?: string;
  task_index?: number;
}

export interface Transcript {
  acquisition: string;
  seed: number;
  queries: Record<string, number>;
  answers: Record<string, number>;
  cluster_class: number[];
  skipped_clusters: number[];
  status: SessionStatus;
}
