"""HTTP REST layer for the portal and programmatic clients.

Endpoint table:

* ``GET  /api/genesets`` — paged gene-set rows; simple search via ``field``
  + ``q``; exact filters via ``filter_*`` params.
* ``GET  /api/search/advanced`` — conjunction of up to nine typed predicates.
* ``GET  /api/clusters/{cluster_id}`` — three-section cluster view.
* ``GET  /api/clusters/{cluster_id}/genesets/{marker_type}`` — one marker set.
* ``POST /api/clusters/{cluster_id}/submissions`` — community edit.
* ``GET  /api/stats`` — corpus-wide counts.

Errors are ``{"error": {"code", "message"}}`` with 400/404/500 status; list
responses use the page envelope ``{items, page, page_size, total_items,
total_pages}``.
"""

from __future__ import annotations

import math
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .store import (
    ADVANCED_FIELDS,
    AnnotationStore,
    NotFoundError,
    PAGE_SIZES,
    SearchMode,
    SearchQuery,
    StoreError,
    ValidationError,
)


def paginate(total_items: int, page_size: int, page: int) -> tuple[int, int, int]:
    """Offset/limit arithmetic for a fixed page size of 20 or 90 rows."""
    if page < 1:
        raise ValidationError("page must be >= 1")
    if page_size not in PAGE_SIZES:
        raise ValidationError(f"page_size must be one of {PAGE_SIZES}")
    if total_items < 0:
        raise ValidationError("total_items must be >= 0")
    total_pages = math.ceil(total_items / page_size)
    return (page - 1) * page_size, page_size, total_pages


def _envelope(items: list, page: int, page_size: int, total_items: int) -> dict:
    _, _, total_pages = paginate(total_items, page_size, page)
    return {
        "items": items,
        "page": page,
        "page_size": page_size,
        "total_items": total_items,
        "total_pages": total_pages,
    }


class SubmissionBody(BaseModel):
    target: str
    field: str
    proposed_text: str
    author: str
    contact: Optional[str] = None


_FILTER_PARAMS = (
    "class_label",
    "subclass_label",
    "supertype_label",
    "nt_type_label",
    "marker_type",
    "source",
)


def _collect_filters(request: Request) -> dict[str, str]:
    filters: dict[str, str] = {}
    for name in _FILTER_PARAMS:
        value = request.query_params.get(f"filter_{name}")
        if value:
            filters[name] = value
    return filters


def create_app(store: AnnotationStore, cors_origin: str | None = None) -> FastAPI:
    app = FastAPI(title="brain cell type annotation service", docs_url=None, redoc_url=None)

    if cors_origin:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=[cors_origin],
            allow_methods=["GET", "POST"],
            allow_headers=["*"],
        )

    def error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(
            status_code=status, content={"error": {"code": code, "message": message}}
        )

    @app.exception_handler(ValidationError)
    async def _validation(_req: Request, exc: ValidationError):
        return error(400, "validation", str(exc))

    @app.exception_handler(RequestValidationError)
    async def _request_validation(_req: Request, exc: RequestValidationError):
        return error(400, "validation", "invalid request parameters")

    @app.exception_handler(NotFoundError)
    async def _not_found(_req: Request, exc: NotFoundError):
        return error(404, "not_found", str(exc))

    @app.exception_handler(StoreError)
    async def _store_error(_req: Request, exc: StoreError):
        return error(400, "validation", str(exc))

    @app.exception_handler(Exception)
    async def _internal(_req: Request, exc: Exception):
        return error(500, "internal", "internal server error")

    @app.get("/api/genesets")
    async def list_genesets(
        request: Request,
        page: int = 1,
        page_size: int = 20,
        field: Optional[str] = None,
        q: Optional[str] = None,
    ):
        query = SearchQuery(
            mode=SearchMode.SIMPLE,
            simple_field=field,
            simple_value=q if field is not None else None,
            filters=_collect_filters(request),
            page=page,
            page_size=page_size,
        )
        if field is not None and q is None:
            raise ValidationError("simple search needs both field and q")
        result = store.search(query)
        body = _envelope(result.items, result.page, result.page_size, result.total)
        body["rollups"] = result.rollups
        return body

    @app.get("/api/search/advanced")
    async def advanced_search(
        request: Request,
        page: int = 1,
        page_size: int = 20,
        cluster_id: Optional[str] = None,
        gene: Optional[str] = None,
        marker_type: Optional[str] = None,
        class_label: Optional[str] = None,
        supertype_label: Optional[str] = None,
        nt_type: Optional[str] = None,
        go_term: Optional[str] = None,
        pmid: Optional[str] = None,
        annotation: Optional[str] = None,
    ):
        predicates = {
            name: value
            for name, value in (
                ("cluster_id", cluster_id),
                ("gene", gene),
                ("marker_type", marker_type),
                ("class_label", class_label),
                ("supertype_label", supertype_label),
                ("nt_type", nt_type),
                ("go_term", go_term),
                ("pmid", pmid),
                ("annotation", annotation),
            )
            if value
        }
        unknown = [k for k in request.query_params if k not in
                   {"page", "page_size", *ADVANCED_FIELDS} and not k.startswith("filter_")]
        if unknown:
            raise ValidationError(
                f"unknown parameters: {', '.join(sorted(unknown))}; "
                f"legal predicates: {', '.join(ADVANCED_FIELDS)}"
            )
        query = SearchQuery(
            mode=SearchMode.ADVANCED,
            advanced=predicates,
            filters=_collect_filters(request),
            page=page,
            page_size=page_size,
        )
        result = store.search(query)
        body = _envelope(result.items, result.page, result.page_size, result.total)
        body["rollups"] = result.rollups
        return body

    @app.get("/api/clusters/{cluster_id}")
    async def cluster_view(cluster_id: str):
        return store.get_cluster_view(cluster_id)

    @app.get("/api/clusters/{cluster_id}/genesets/{marker_type}")
    async def cluster_geneset(cluster_id: str, marker_type: str):
        view = store.get_cluster_view(cluster_id)
        for block in view["gene_sets"]:
            if block["marker_type"] == marker_type:
                return block
        raise NotFoundError(f"cluster {cluster_id!r} has no {marker_type!r} gene set")

    @app.post("/api/clusters/{cluster_id}/submissions", status_code=201)
    async def submit(cluster_id: str, body: SubmissionBody):
        submission = store.submit_edit(
            cluster_id=cluster_id,
            target=body.target,
            field_name=body.field,
            proposed_text=body.proposed_text,
            author=body.author,
            contact=body.contact,
        )
        return submission.to_dict()

    @app.get("/api/stats")
    async def stats():
        return store.stats()

    return app


def serve(store: AnnotationStore, host: str, port: int, cors_origin: str | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(store, cors_origin), host=host, port=port, log_level="warning")
