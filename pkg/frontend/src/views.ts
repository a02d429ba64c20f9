/**
 * Detail-page view models: external cross-reference links for every gene
 * symbol, GO accession, and PMID, plus the detailed-summary toggle that
 * never refetches already-loaded text.
 */

const GO_ID = /^GO:[0-9]{7}$/;

export function geneLink(symbol: string): string {
  return `https://www.ncbi.nlm.nih.gov/gene/?term=${encodeURIComponent(symbol)}`;
}

export function goLink(goId: string): string {
  if (!GO_ID.test(goId)) throw new Error(`not a GO accession: ${goId}`);
  return `https://amigo.geneontology.org/amigo/term/${encodeURIComponent(goId)}`;
}

export function pmidLink(pmid: number | string): string {
  return `https://pubmed.ncbi.nlm.nih.gov/${pmid}/`;
}

export function atlasLink(clusterId: string): string {
  return `https://knowledge.brain-map.org/celltypes?cluster=${encodeURIComponent(clusterId)}`;
}

/**
 * "Click for Detailed Summary": the extended text arrives with the cluster
 * view, so toggling visibility must not trigger a second fetch.
 */
export class DetailToggle {
  visible = false;
  fetches = 0;
  private text: string | null = null;

  constructor(private load: () => Promise<string>) {}

  async toggle(): Promise<string | null> {
    this.visible = !this.visible;
    if (this.visible && this.text === null) {
      this.fetches += 1;
      this.text = await this.load();
    }
    return this.visible ? this.text : null;
  }
}
