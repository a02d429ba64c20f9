import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { DetailToggle, atlasLink, geneLink, goLink, pmidLink } from "../src/views.js";

describe("cross-reference links", () => {
  it("links gene symbols to NCBI", () => {
    expect(geneLink("Slc6a3")).toBe("https://www.ncbi.nlm.nih.gov/gene/?term=Slc6a3");
  });

  it("links GO accessions to the ontology browser", () => {
    expect(goLink("GO:0000010")).toBe("https://amigo.geneontology.org/amigo/term/GO%3A0000010");
    expect(() => goLink("0000010")).toThrow(/GO accession/);
  });

  it("links PMIDs to PubMed", () => {
    expect(pmidLink(22222221)).toBe("https://pubmed.ncbi.nlm.nih.gov/22222221/");
  });

  it("links clusters to the atlas platform", () => {
    expect(atlasLink("1571")).toContain("cluster=1571");
  });
});

describe("DetailToggle", () => {
  it("loads once and toggles without a second fetch", async () => {
    let loads = 0;
    const toggle = new DetailToggle(async () => {
      loads++;
      return "detailed text";
    });
    expect(await toggle.toggle()).toBe("detailed text"); // open: loads
    expect(await toggle.toggle()).toBeNull(); // close
    expect(await toggle.toggle()).toBe("detailed text"); // reopen: cached
    expect(loads).toBe(1);
    expect(toggle.fetches).toBe(1);
  });
});

describe("request deduplication and sequencing", () => {
  it("shares one fetch between identical concurrent GETs", async () => {
    let calls = 0;
    const api = new ApiClient("", async () => {
      calls++;
      await new Promise((r) => setTimeout(r, 5));
      return new Response(JSON.stringify({ ok: true }), {
        status: 200,
        headers: { "content-type": "application/json" },
      });
    });
    const [a, b] = await Promise.all([api.getStats(), api.getStats()]);
    expect(a).toEqual(b);
    expect(calls).toBe(1);
  });

  it("discards stale list responses by sequence number", () => {
    const api = new ApiClient("");
    // Simulate: request 1 issued, then request 2; response 2 lands first.
    expect(api.applyIfFresh(2)).toBe(true);
    expect(api.applyIfFresh(1)).toBe(false); // stale response dropped
    expect(api.applyIfFresh(3)).toBe(true);
  });
});
