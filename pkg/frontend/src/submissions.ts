/**
 * Community submission form: validation, POST with error handling, and the
 * parallel-display model (expert edits render beside, never instead of, the
 * machine annotation).
 */

import { ApiClient, ApiError, NetworkError, type Submission } from "./api.js";

export interface SubmissionDraft {
  target: string; // marker type value or "summary"
  field: string;
  proposedText: string;
  author: string;
  contact?: string;
}

export type FieldErrors = Partial<Record<"target" | "field" | "proposedText" | "author", string>>;

export function validateDraft(draft: SubmissionDraft): FieldErrors {
  const errors: FieldErrors = {};
  if (!draft.target.trim()) errors.target = "Choose what to annotate.";
  if (!draft.field.trim()) errors.field = "Choose which field to edit.";
  if (!draft.proposedText.trim()) errors.proposedText = "Proposed text must not be empty.";
  if (!draft.author.trim()) errors.author = "Please sign your submission.";
  return errors;
}

export type SubmitOutcome =
  | { kind: "success"; submission: Submission }
  | { kind: "invalid"; errors: FieldErrors }
  | { kind: "server_rejected"; message: string }
  | { kind: "network_failure"; draft: SubmissionDraft; message: string };

/**
 * Submit a draft. Client-side validation runs first; a server 400 comes back
 * as an inline message; a network failure returns the draft untouched so the
 * form can offer a retry without losing the text.
 */
export async function submitAnnotation(
  api: ApiClient,
  clusterId: string,
  draft: SubmissionDraft,
): Promise<SubmitOutcome> {
  const errors = validateDraft(draft);
  if (Object.keys(errors).length > 0) {
    return { kind: "invalid", errors };
  }
  try {
    const submission = await api.postSubmission(clusterId, {
      target: draft.target,
      field: draft.field,
      proposed_text: draft.proposedText,
      author: draft.author,
      contact: draft.contact ?? null,
    });
    return { kind: "success", submission };
  } catch (err) {
    if (err instanceof NetworkError) {
      return { kind: "network_failure", draft, message: "Network failure; try again." };
    }
    if (err instanceof ApiError && err.status === 400) {
      return { kind: "server_rejected", message: err.message };
    }
    throw err;
  }
}

export interface DisplayEntry {
  origin: "machine" | "community";
  text: string;
  author?: string;
  timestamp?: string;
  status?: string;
}

/**
 * Parallel display: the original machine text first, then every community
 * submission for the same target/field in chronological order.
 */
export function parallelDisplay(
  originalText: string,
  submissions: Submission[],
  target: string,
  field: string,
): DisplayEntry[] {
  const entries: DisplayEntry[] = [{ origin: "machine", text: originalText }];
  const relevant = submissions
    .filter((s) => s.target === target && s.field_name === field)
    .sort((a, b) =>
      a.submitted_at === b.submitted_at
        ? a.submission_id.localeCompare(b.submission_id)
        : a.submitted_at.localeCompare(b.submitted_at),
    );
  for (const s of relevant) {
    entries.push({
      origin: "community",
      text: s.proposed_text,
      author: s.author,
      timestamp: s.submitted_at,
      status: s.status,
    });
  }
  return entries;
}
