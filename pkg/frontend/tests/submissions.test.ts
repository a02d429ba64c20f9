import { describe, expect, it } from "vitest";

import { ApiClient, type Submission } from "../src/api.js";
import {
  parallelDisplay,
  submitAnnotation,
  validateDraft,
  type SubmissionDraft,
} from "../src/submissions.js";

const DRAFT: SubmissionDraft = {
  target: "tf",
  field: "initial",
  proposedText: "These are GABAergic projection neurons.",
  author: "Dr. Reviewer",
};

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function clientReturning(handler: (url: string, init?: RequestInit) => Response | Error) {
  return new ApiClient("", async (url, init) => {
    const out = handler(url, init);
    if (out instanceof Error) throw out;
    return out;
  });
}

describe("validateDraft", () => {
  it("flags every empty required field", () => {
    const errors = validateDraft({ target: "", field: " ", proposedText: "", author: "" });
    expect(Object.keys(errors).sort()).toEqual(["author", "field", "proposedText", "target"]);
  });

  it("accepts a complete draft", () => {
    expect(validateDraft(DRAFT)).toEqual({});
  });
});

describe("submitAnnotation", () => {
  it("posts the draft and returns the stored submission", async () => {
    let captured: { url: string; body: unknown } | null = null;
    const api = clientReturning((url, init) => {
      captured = { url, body: JSON.parse(String(init?.body)) };
      return jsonResponse(201, {
        submission_id: "S000001",
        cluster_id: "2042",
        target: "tf",
        field_name: "initial",
        proposed_text: DRAFT.proposedText,
        author: DRAFT.author,
        contact: null,
        submitted_at: "2026-01-01T00:00:00Z",
        status: "pending",
      });
    });
    const outcome = await submitAnnotation(api, "2042", DRAFT);
    expect(outcome.kind).toBe("success");
    expect(captured!.url).toBe("/api/clusters/2042/submissions");
    expect(captured!.body).toMatchObject({
      target: "tf",
      field: "initial",
      proposed_text: DRAFT.proposedText,
    });
    if (outcome.kind === "success") {
      expect(outcome.submission.status).toBe("pending");
      expect(outcome.submission.submitted_at).toBeTruthy();
    }
  });

  it("blocks empty text client-side without touching the network", async () => {
    let fetched = 0;
    const api = clientReturning(() => {
      fetched++;
      return jsonResponse(201, {});
    });
    const outcome = await submitAnnotation(api, "2042", { ...DRAFT, proposedText: "  " });
    expect(outcome.kind).toBe("invalid");
    expect(fetched).toBe(0);
    if (outcome.kind === "invalid") {
      expect(outcome.errors.proposedText).toMatch(/empty/i);
    }
  });

  it("maps a server 400 onto an inline message", async () => {
    const api = clientReturning(() =>
      jsonResponse(400, { error: { code: "validation", message: "unknown field 'initial2'" } }),
    );
    const outcome = await submitAnnotation(api, "2042", DRAFT);
    expect(outcome.kind).toBe("server_rejected");
    if (outcome.kind === "server_rejected") {
      expect(outcome.message).toMatch(/unknown field/);
    }
  });

  it("keeps the draft on network failure so retry loses nothing", async () => {
    const api = clientReturning(() => new TypeError("fetch failed"));
    const outcome = await submitAnnotation(api, "2042", DRAFT);
    expect(outcome.kind).toBe("network_failure");
    if (outcome.kind === "network_failure") {
      expect(outcome.draft).toEqual(DRAFT);
    }
  });
});

describe("parallelDisplay", () => {
  const submission = (id: string, at: string, text: string): Submission => ({
    submission_id: id,
    cluster_id: "2042",
    target: "tf",
    field_name: "initial",
    proposed_text: text,
    author: "A",
    contact: null,
    submitted_at: at,
    status: "pending",
  });

  it("renders the machine text first, then submissions chronologically", () => {
    const entries = parallelDisplay(
      "Machine text.",
      [
        submission("S2", "2026-01-02T00:00:00Z", "second"),
        submission("S1", "2026-01-01T00:00:00Z", "first"),
      ],
      "tf",
      "initial",
    );
    expect(entries.map((e) => e.origin)).toEqual(["machine", "community", "community"]);
    expect(entries[1].text).toBe("first");
    expect(entries[2].text).toBe("second");
    expect(entries[1].timestamp).toBe("2026-01-01T00:00:00Z");
  });

  it("shows only submissions for the matching target and field", () => {
    const entries = parallelDisplay(
      "Machine text.",
      [
        submission("S1", "2026-01-01T00:00:00Z", "keep"),
        { ...submission("S2", "2026-01-01T00:00:01Z", "drop"), target: "summary" },
        { ...submission("S3", "2026-01-01T00:00:02Z", "drop"), field_name: "top_pm" },
      ],
      "tf",
      "initial",
    );
    expect(entries).toHaveLength(2);
    expect(entries[1].text).toBe("keep");
  });

  it("never replaces the original entry", () => {
    const entries = parallelDisplay("Original.", [submission("S1", "t", "edit")], "tf", "initial");
    expect(entries[0]).toEqual({ origin: "machine", text: "Original." });
  });
});
