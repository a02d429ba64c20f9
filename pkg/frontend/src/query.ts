/**
 * Maps a ViewState onto the service's endpoint table. Every produced
 * parameter is a legal endpoint parameter and empty predicates are omitted.
 */

import {
  ADVANCED_FIELDS,
  FILTER_FIELDS,
  type ViewState,
} from "./state.js";

export interface ApiRequest {
  path: "/api/genesets" | "/api/search/advanced";
  params: URLSearchParams;
}

export function buildQuery(state: ViewState): ApiRequest {
  const params = new URLSearchParams();
  params.set("page", String(state.page));
  params.set("page_size", String(state.pageSize));

  let path: ApiRequest["path"] = "/api/genesets";
  if (state.query?.kind === "simple") {
    if (state.query.value.trim() !== "") {
      params.set("field", state.query.field);
      params.set("q", state.query.value);
    }
  } else if (state.query?.kind === "advanced") {
    path = "/api/search/advanced";
    for (const field of ADVANCED_FIELDS) {
      const value = state.query.predicates[field];
      if (value && value.trim() !== "") {
        params.set(field, value);
      }
    }
  }
  for (const field of FILTER_FIELDS) {
    const value = state.filters[field];
    if (value && value.trim() !== "") {
      params.set(`filter_${field}`, value);
    }
  }
  return { path, params };
}

export function requestUrl(baseUrl: string, request: ApiRequest): string {
  return `${baseUrl}${request.path}?${request.params.toString()}`;
}
