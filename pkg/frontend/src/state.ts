/**
 * Portal view state: current page, page size, active query and filters,
 * selected cluster. The state round-trips through the URL query string so
 * searches are shareable, and the page resets to 1 whenever the query,
 * filters, or page size change.
 */

export type PageSize = 20 | 90;

export const PAGE_SIZES: readonly PageSize[] = [20, 90];

export const SIMPLE_FIELDS = [
  "cluster_id",
  "supertype_label",
  "class_label",
  "nt_type_label",
  "marker_type",
  "genes",
] as const;

export type SimpleField = (typeof SIMPLE_FIELDS)[number];

/** Homepage labels for the six quick-search fields. */
export const SIMPLE_FIELD_LABELS: Record<string, SimpleField> = {
  "Cluster ID": "cluster_id",
  "Super Type": "supertype_label",
  "Class Label": "class_label",
  "NT Type Label": "nt_type_label",
  "Marker Type": "marker_type",
  "Marker Genes": "genes",
};

export const ADVANCED_FIELDS = [
  "cluster_id",
  "gene",
  "marker_type",
  "class_label",
  "supertype_label",
  "nt_type",
  "go_term",
  "pmid",
  "annotation",
] as const;

export type AdvancedField = (typeof ADVANCED_FIELDS)[number];

export const FILTER_FIELDS = [
  "class_label",
  "subclass_label",
  "supertype_label",
  "nt_type_label",
  "marker_type",
  "source",
] as const;

export type FilterField = (typeof FILTER_FIELDS)[number];

export interface SimpleQuery {
  kind: "simple";
  field: SimpleField;
  value: string;
}

export interface AdvancedQuery {
  kind: "advanced";
  predicates: Partial<Record<AdvancedField, string>>;
}

export type ActiveQuery = SimpleQuery | AdvancedQuery | null;

export interface ViewState {
  page: number;
  pageSize: PageSize;
  query: ActiveQuery;
  filters: Partial<Record<FilterField, string>>;
  selectedCluster: string | null;
}

export function initialState(): ViewState {
  return { page: 1, pageSize: 20, query: null, filters: {}, selectedCluster: null };
}

/** Any query change returns to the first page. */
export function setQuery(state: ViewState, query: ActiveQuery): ViewState {
  return { ...state, query, page: 1 };
}

export function setFilters(
  state: ViewState,
  filters: Partial<Record<FilterField, string>>,
): ViewState {
  return { ...state, filters, page: 1 };
}

export function setPageSize(state: ViewState, pageSize: PageSize): ViewState {
  if (!PAGE_SIZES.includes(pageSize)) {
    throw new Error(`page size must be one of ${PAGE_SIZES.join(", ")}`);
  }
  return { ...state, pageSize, page: 1 };
}

export function selectCluster(state: ViewState, clusterId: string | null): ViewState {
  return { ...state, selectedCluster: clusterId };
}

/**
 * Simple-mode form validation: exactly one of the six fields may be active.
 * Returns a user-facing message, or null when the selection is valid.
 */
export function validateSimpleSelection(selectedFields: string[]): string | null {
  if (selectedFields.length === 0) {
    return "Pick one search field.";
  }
  if (selectedFields.length > 1) {
    return "Simple search uses exactly one field; use Advanced Search to combine fields.";
  }
  const field = selectedFields[0];
  if (!(SIMPLE_FIELDS as readonly string[]).includes(field)) {
    return `Unknown search field: ${field}`;
  }
  return null;
}

// -- URL round-trip ---------------------------------------------------------

export function encodeState(state: ViewState): URLSearchParams {
  const params = new URLSearchParams();
  if (state.page !== 1) params.set("page", String(state.page));
  if (state.pageSize !== 20) params.set("page_size", String(state.pageSize));
  if (state.query?.kind === "simple") {
    params.set("field", state.query.field);
    params.set("q", state.query.value);
  } else if (state.query?.kind === "advanced") {
    params.set("mode", "advanced");
    for (const field of ADVANCED_FIELDS) {
      const value = state.query.predicates[field];
      if (value) params.set(field, value);
    }
  }
  for (const field of FILTER_FIELDS) {
    const value = state.filters[field];
    if (value) params.set(`filter_${field}`, value);
  }
  if (state.selectedCluster) params.set("cluster", state.selectedCluster);
  return params;
}

export function decodeState(params: URLSearchParams): ViewState {
  const state = initialState();
  const page = Number(params.get("page") ?? "1");
  state.page = Number.isInteger(page) && page >= 1 ? page : 1;
  const size = Number(params.get("page_size") ?? "20");
  state.pageSize = size === 90 ? 90 : 20;

  if (params.get("mode") === "advanced") {
    const predicates: Partial<Record<AdvancedField, string>> = {};
    for (const field of ADVANCED_FIELDS) {
      const value = params.get(field);
      if (value) predicates[field] = value;
    }
    state.query = { kind: "advanced", predicates };
  } else {
    const field = params.get("field");
    const value = params.get("q");
    if (field && value !== null && (SIMPLE_FIELDS as readonly string[]).includes(field)) {
      state.query = { kind: "simple", field: field as SimpleField, value };
    }
  }
  for (const field of FILTER_FIELDS) {
    const value = params.get(`filter_${field}`);
    if (value) state.filters[field] = value;
  }
  state.selectedCluster = params.get("cluster");
  return state;
}
