/**
 * Pagination controls. Navigation never emits a page below 1 or beyond the
 * last page; shortcuts are a compact window around the current page.
 */

export function clampPage(page: number, totalPages: number): number {
  const last = Math.max(totalPages, 1);
  if (!Number.isFinite(page)) return 1;
  return Math.min(Math.max(Math.trunc(page), 1), last);
}

export function nextPage(current: number, totalPages: number): number {
  return clampPage(current + 1, totalPages);
}

export function previousPage(current: number, totalPages: number): number {
  return clampPage(current - 1, totalPages);
}

export function canGoNext(current: number, totalPages: number): boolean {
  return current < totalPages;
}

export function canGoPrevious(current: number): boolean {
  return current > 1;
}

/** Page-number shortcuts: first, last, and a window around the current page. */
export function pageShortcuts(current: number, totalPages: number, radius = 2): number[] {
  if (totalPages <= 0) return [];
  const pages = new Set<number>([1, totalPages]);
  for (let p = current - radius; p <= current + radius; p++) {
    if (p >= 1 && p <= totalPages) pages.add(p);
  }
  return [...pages].sort((a, b) => a - b);
}
