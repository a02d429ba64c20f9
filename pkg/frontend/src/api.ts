/**
 * Typed client for the annotation service JSON API (the portal's only
 * backend). Concurrent identical GETs are deduplicated by request key, and
 * list responses carry a sequence number so stale replies can be discarded.
 */

import { buildQuery, requestUrl } from "./query.js";
import type { ViewState } from "./state.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface PageEnvelope<T> {
  items: T[];
  page: number;
  page_size: number;
  total_items: number;
  total_pages: number;
  rollups?: Record<string, number>;
}

export interface GeneSetRow {
  cluster_id: string;
  marker_type: string;
  genes: string[];
  class_label: string;
  subclass_label: string;
  supertype_label: string;
  nt_type_label: string;
  annotated: boolean;
  sources: string[];
}

export interface Submission {
  submission_id: string;
  cluster_id: string;
  target: string;
  field_name: string;
  proposed_text: string;
  author: string;
  contact: string | null;
  submitted_at: string;
  status: string;
}

export interface ClusterView {
  cluster: Record<string, string>;
  summary: Record<string, unknown> | null;
  gene_sets: Array<Record<string, unknown>>;
  submissions: Submission[];
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export class NetworkError extends Error {}

async function parseError(response: Response): Promise<ApiError> {
  try {
    const body = await response.json();
    return new ApiError(response.status, body.error.code, body.error.message);
  } catch {
    return new ApiError(response.status, "unknown", response.statusText);
  }
}

export class ApiClient {
  private inflight = new Map<string, Promise<unknown>>();
  private listSequence = 0;
  private appliedSequence = 0;

  constructor(
    public baseUrl: string,
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  /** Deduplicated GET: identical concurrent requests share one fetch. */
  private getJson<T>(url: string): Promise<T> {
    const pending = this.inflight.get(url);
    if (pending) return pending as Promise<T>;
    const promise = (async () => {
      let response: Response;
      try {
        response = await this.fetchImpl(url);
      } catch (err) {
        throw new NetworkError(String(err));
      } finally {
        // Remove before resolution ordering issues; re-gets start fresh.
        queueMicrotask(() => this.inflight.delete(url));
      }
      if (!response.ok) throw await parseError(response);
      return (await response.json()) as T;
    })();
    this.inflight.set(url, promise);
    return promise;
  }

  /**
   * List gene sets for a view state. The result carries a sequence number;
   * call {@link applyIfFresh} so out-of-order responses are dropped.
   */
  async listGenesets(
    state: ViewState,
  ): Promise<{ seq: number; envelope: PageEnvelope<GeneSetRow> }> {
    const seq = ++this.listSequence;
    const envelope = await this.getJson<PageEnvelope<GeneSetRow>>(
      requestUrl(this.baseUrl, buildQuery(state)),
    );
    return { seq, envelope };
  }

  /** True (and records the sequence) only when no newer response applied. */
  applyIfFresh(seq: number): boolean {
    if (seq <= this.appliedSequence) return false;
    this.appliedSequence = seq;
    return true;
  }

  getClusterView(clusterId: string): Promise<ClusterView> {
    return this.getJson(`${this.baseUrl}/api/clusters/${encodeURIComponent(clusterId)}`);
  }

  getGeneSet(clusterId: string, markerType: string): Promise<Record<string, unknown>> {
    return this.getJson(
      `${this.baseUrl}/api/clusters/${encodeURIComponent(clusterId)}/genesets/${encodeURIComponent(markerType)}`,
    );
  }

  getStats(): Promise<Record<string, unknown>> {
    return this.getJson(`${this.baseUrl}/api/stats`);
  }

  async postSubmission(
    clusterId: string,
    body: {
      target: string;
      field: string;
      proposed_text: string;
      author: string;
      contact?: string | null;
    },
  ): Promise<Submission> {
    let response: Response;
    try {
      response = await this.fetchImpl(
        `${this.baseUrl}/api/clusters/${encodeURIComponent(clusterId)}/submissions`,
        {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify(body),
        },
      );
    } catch (err) {
      throw new NetworkError(String(err));
    }
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as Submission;
  }
}
