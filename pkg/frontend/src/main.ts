/**
 * Single-page portal: browse marker gene sets, search (simple and advanced),
 * open three-section cluster pages, and submit community annotations. State
 * lives in the URL so every search and detail page is shareable.
 */

import { ApiClient, type GeneSetRow, type PageEnvelope, type Submission } from "./api.js";
import {
  canGoNext,
  canGoPrevious,
  clampPage,
  nextPage,
  pageShortcuts,
  previousPage,
} from "./pagination.js";
import {
  ADVANCED_FIELDS,
  SIMPLE_FIELD_LABELS,
  decodeState,
  encodeState,
  selectCluster,
  setPageSize,
  setQuery,
  validateSimpleSelection,
  type ViewState,
} from "./state.js";
import { parallelDisplay, submitAnnotation, type SubmissionDraft } from "./submissions.js";
import { DetailToggle, geneLink, goLink, pmidLink, atlasLink } from "./views.js";

const api = new ApiClient((window as any).BCAID_API_BASE ?? "");

let state: ViewState = decodeState(new URLSearchParams(location.search));
let totalPages = 1;

const root = document.getElementById("app") as HTMLElement;

function pushState(next: ViewState): void {
  state = next;
  const qs = encodeState(state).toString();
  history.pushState(null, "", qs ? `?${qs}` : location.pathname);
  void render();
}

window.addEventListener("popstate", () => {
  state = decodeState(new URLSearchParams(location.search));
  void render();
});

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: Array<Node | string>
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  node.append(...children);
  return node;
}

function link(href: string, text: string): HTMLAnchorElement {
  return el("a", { href, target: "_blank", rel: "noopener" }, text);
}

async function render(): Promise<void> {
  root.replaceChildren(el("p", { class: "loading" }, "Loading…"));
  try {
    if (state.selectedCluster) {
      await renderClusterPage(state.selectedCluster);
    } else {
      await renderTablePage();
    }
  } catch (err) {
    root.replaceChildren(el("p", { class: "error" }, `Request failed: ${String(err)}`));
  }
}

// -- gene set table -----------------------------------------------------------

async function renderTablePage(): Promise<void> {
  const { seq, envelope } = await api.listGenesets(state);
  if (!api.applyIfFresh(seq)) return; // a newer response already rendered
  totalPages = envelope.total_pages;
  root.replaceChildren(
    searchControls(),
    summaryLine(envelope),
    genesetTable(envelope),
    paginationControls(),
  );
}

function searchControls(): HTMLElement {
  const fieldSelect = el("select", { id: "simple-field" });
  for (const label of Object.keys(SIMPLE_FIELD_LABELS)) {
    fieldSelect.append(el("option", { value: SIMPLE_FIELD_LABELS[label] }, label));
  }
  const input = el("input", { id: "simple-q", placeholder: "Quick search…" });
  if (state.query?.kind === "simple") {
    (fieldSelect as HTMLSelectElement).value = state.query.field;
    (input as HTMLInputElement).value = state.query.value;
  }
  const message = el("span", { class: "validation" });
  const go = el("button", {}, "Search");
  go.addEventListener("click", () => {
    const field = (fieldSelect as HTMLSelectElement).value;
    const error = validateSimpleSelection(field ? [field] : []);
    if (error) {
      message.textContent = error;
      return;
    }
    message.textContent = "";
    pushState(setQuery(state, {
      kind: "simple",
      field: field as never,
      value: (input as HTMLInputElement).value,
    }));
  });
  const clear = el("button", {}, "Clear");
  clear.addEventListener("click", () => pushState(setQuery(state, null)));

  const advanced = el("details", {}, el("summary", {}, "Advanced Search"));
  const advForm = el("div", { class: "advanced" });
  const inputs: Partial<Record<string, HTMLInputElement>> = {};
  for (const field of ADVANCED_FIELDS) {
    const box = el("input", { placeholder: field });
    if (state.query?.kind === "advanced") {
      box.value = state.query.predicates[field] ?? "";
    }
    inputs[field] = box;
    advForm.append(el("label", {}, `${field}: `, box));
  }
  const advGo = el("button", {}, "Run advanced search");
  advGo.addEventListener("click", () => {
    const predicates: Record<string, string> = {};
    for (const field of ADVANCED_FIELDS) {
      const value = inputs[field]?.value.trim();
      if (value) predicates[field] = value;
    }
    pushState(setQuery(state, { kind: "advanced", predicates }));
  });
  advForm.append(advGo);
  advanced.append(advForm);

  const toggle = el("button", {}, state.pageSize === 20 ? "Toggle Large Table (90)" : "Toggle Large Table (20)");
  toggle.addEventListener("click", () =>
    pushState(setPageSize(state, state.pageSize === 20 ? 90 : 20)),
  );

  return el("div", { class: "controls" }, fieldSelect, input, go, clear, message, toggle, advanced);
}

function summaryLine(envelope: PageEnvelope<GeneSetRow>): HTMLElement {
  const rollups = envelope.rollups
    ? ` — ${envelope.rollups.classes} classes, ${envelope.rollups.subclasses} subclasses, ` +
      `${envelope.rollups.supertypes} supertypes, ${envelope.rollups.clusters} clusters`
    : "";
  return el(
    "p",
    { class: "summary" },
    `${envelope.total_items} gene sets (page ${envelope.page} of ${Math.max(envelope.total_pages, 1)})${rollups}`,
  );
}

function genesetTable(envelope: PageEnvelope<GeneSetRow>): HTMLElement {
  const header = el(
    "tr",
    {},
    ...["Cluster ID", "Super Type", "Class Label", "NT Type Label", "Marker Type", "Marker Genes", ""].map(
      (h) => el("th", {}, h),
    ),
  );
  const body = envelope.items.map((row) => {
    const genes = el("td", {});
    row.genes.forEach((g, i) => {
      if (i) genes.append(" ");
      genes.append(link(geneLink(g), g));
    });
    const view = el("button", {}, "View");
    view.addEventListener("click", () => pushState(selectCluster(state, row.cluster_id)));
    return el(
      "tr",
      {},
      el("td", {}, row.cluster_id),
      el("td", {}, row.supertype_label),
      el("td", {}, row.class_label),
      el("td", {}, row.nt_type_label),
      el("td", {}, row.marker_type),
      genes,
      el("td", {}, view),
    );
  });
  return el("table", { class: "genesets" }, header, ...body);
}

function paginationControls(): HTMLElement {
  const controls = el("div", { class: "pagination" });
  const prev = el("button", {}, "Previous");
  if (!canGoPrevious(state.page)) prev.setAttribute("disabled", "");
  prev.addEventListener("click", () =>
    pushState({ ...state, page: previousPage(state.page, totalPages) }),
  );
  const next = el("button", {}, "Next");
  if (!canGoNext(state.page, totalPages)) next.setAttribute("disabled", "");
  next.addEventListener("click", () =>
    pushState({ ...state, page: nextPage(state.page, totalPages) }),
  );
  controls.append(prev);
  for (const p of pageShortcuts(state.page, totalPages)) {
    const button = el("button", { class: p === state.page ? "current" : "" }, String(p));
    button.addEventListener("click", () => pushState({ ...state, page: clampPage(p, totalPages) }));
    controls.append(button);
  }
  controls.append(next);
  return controls;
}

// -- cluster detail page --------------------------------------------------------

async function renderClusterPage(clusterId: string): Promise<void> {
  const view = await api.getClusterView(clusterId);
  const back = el("button", {}, "← Back to gene sets");
  back.addEventListener("click", () => pushState(selectCluster(state, null)));

  const info = el(
    "section",
    { class: "cluster-info" },
    el("h2", {}, `Brain Cell Cluster ${view.cluster.cluster_id}`),
    el("p", {}, `Class: ${view.cluster.class_label} · Subclass: ${view.cluster.subclass_label} · ` +
      `Supertype: ${view.cluster.supertype_label} · NT type: ${view.cluster.nt_type_label}`),
    el("p", {}, `Anatomical location: ${view.cluster.anatomical_location} · `,
      link(atlasLink(clusterId), "Brain Knowledge Platform")),
  );

  const summarySection = el("section", { class: "summary-section" }, el("h3", {}, "Cell Cluster Annotation Summary"));
  if (view.summary) {
    const summary = view.summary as { brief: string; detailed: string };
    summarySection.append(el("p", {}, summary.brief));
    const detailHost = el("div", {});
    const toggleButton = el("button", {}, "Click for Detailed Summary");
    const toggleState = new DetailToggle(async () => summary.detailed);
    toggleButton.addEventListener("click", async () => {
      const text = await toggleState.toggle();
      detailHost.replaceChildren(text ? el("p", { class: "detailed" }, text) : "");
    });
    summarySection.append(toggleButton, detailHost);
    summarySection.append(submissionPanel(clusterId, "summary", "brief", summary.brief, view.submissions));
  } else {
    summarySection.append(el("p", { class: "absent" }, "No summary available yet."));
  }

  const setsSection = el("section", { class: "genesets-section" }, el("h3", {}, "Marker Gene Sets"));
  for (const block of view.gene_sets) {
    setsSection.append(geneSetBlock(clusterId, block, view.submissions));
  }

  root.replaceChildren(back, info, summarySection, setsSection);
}

function geneSetBlock(
  clusterId: string,
  block: Record<string, unknown>,
  submissions: Submission[],
): HTMLElement {
  const markerType = String(block.marker_type);
  const section = el("div", { class: "geneset-block" }, el("h4", {}, markerType));
  const genesHost = el("p", {}, "Genes: ");
  for (const [i, g] of (block.genes as string[]).entries()) {
    if (i) genesHost.append(" ");
    genesHost.append(link(geneLink(g), g));
  }
  section.append(genesHost);

  const annotation = block.annotation as Record<string, any> | null;
  if (annotation) {
    section.append(
      el("p", {}, "Initial annotation: ", annotation.initial_narrative),
      goTermsLine("Initial GO terms", annotation.initial_go_terms),
    );
    for (const variant of ["top_pm", "top_gene"]) {
      const refined = annotation.refined?.[variant];
      if (!refined) continue;
      const line = el("p", {}, `${variant} annotation: ${refined.summary} `);
      for (const pmid of refined.cited_pmids as number[]) {
        line.append(" ", link(pmidLink(pmid), `PMID:${pmid}`));
      }
      section.append(line, goTermsLine(`${variant} GO terms`, refined.go_terms));
    }
    section.append(
      submissionPanel(clusterId, markerType, "initial", annotation.initial_narrative, submissions),
    );
  } else {
    section.append(el("p", { class: "absent" }, "Not annotated yet."));
  }
  return section;
}

function goTermsLine(label: string, terms: Array<[string, number]>): HTMLElement {
  const line = el("p", {}, `${label}: `);
  for (const [i, [goId]] of terms.entries()) {
    if (i) line.append(", ");
    line.append(link(goLink(goId), goId));
  }
  return line;
}

// -- community submissions -------------------------------------------------------

function submissionPanel(
  clusterId: string,
  target: string,
  field: string,
  originalText: string,
  submissions: Submission[],
): HTMLElement {
  const panel = el("div", { class: "submissions" });
  const list = el("div", { class: "parallel" });
  const renderEntries = (all: Submission[]) => {
    list.replaceChildren();
    for (const entry of parallelDisplay(originalText, all, target, field)) {
      const meta =
        entry.origin === "community"
          ? ` — ${entry.author} at ${entry.timestamp} (${entry.status})`
          : " — machine annotation";
      list.append(el("p", { class: entry.origin }, entry.text + meta));
    }
  };
  renderEntries(submissions);

  const form = el("details", {}, el("summary", {}, "Annotate this cluster"));
  const text = el("textarea", { rows: "3", placeholder: "Proposed text" });
  const author = el("input", { placeholder: "Your name" });
  const contact = el("input", { placeholder: "Contact (optional)" });
  const message = el("span", { class: "validation" });
  const send = el("button", {}, "Submit annotation");
  let known = [...submissions];
  send.addEventListener("click", async () => {
    const draft: SubmissionDraft = {
      target,
      field,
      proposedText: (text as HTMLTextAreaElement).value,
      author: (author as HTMLInputElement).value,
      contact: (contact as HTMLInputElement).value || undefined,
    };
    const outcome = await submitAnnotation(api, clusterId, draft);
    if (outcome.kind === "success") {
      known = [...known, outcome.submission];
      renderEntries(known); // renders in parallel without a reload
      (text as HTMLTextAreaElement).value = "";
      message.textContent = "Submitted.";
    } else if (outcome.kind === "invalid") {
      message.textContent = Object.values(outcome.errors).join(" ");
    } else if (outcome.kind === "server_rejected") {
      message.textContent = outcome.message;
    } else {
      message.textContent = `${outcome.message} Your text was kept.`;
    }
  });
  form.append(text, author, contact, send, message);
  panel.append(list, form);
  return panel;
}

void render();
