"""HTTP API over the store: query, explain, tree upload/download, metadata."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse

from .flowagg import Granularity, TreeKey
from .flowdb import CacheConfig, FlowDB, NotFound
from .flowql import execute, explain, parse
from .flowql.parser import QLError
from .flowtree import DecodeError, deserialize, serialize
from .hierarchy import FeatureSet

MAX_TREE_BODY = 64 << 20  # one serialized tree


@dataclass
class ServerConfig:
    store_root: str = "./store"
    listen: str = "127.0.0.1:8080"
    cache_trees: int = 4096
    workers: int = 4
    query_timeout: float = 60.0
    ui_dir: Optional[str] = None

    def __post_init__(self):
        self.store_root = os.path.abspath(self.store_root)
        if self.ui_dir:
            self.ui_dir = os.path.abspath(self.ui_dir)
        if self.workers < 1:
            raise ValueError("worker pool must be >= 1")

    @property
    def host(self) -> str:
        return self.listen.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen.rsplit(":", 1)[1])


def _error(status: int, message: str, line: int = 0, col: int = 0) -> JSONResponse:
    body = {"error": message}
    if line or col:
        body["line"] = line
        body["col"] = col
    return JSONResponse(body, status_code=status)


def create_app(db: FlowDB, config: Optional[ServerConfig] = None) -> FastAPI:
    config = config or ServerConfig()
    app = FastAPI(title="flowsight", docs_url=None, redoc_url=None)

    @app.get("/api/v1/query")
    def query(q: str, request: Request):
        try:
            plan = parse(q)
            table = execute(
                db, plan, timeout=config.query_timeout, workers=config.workers
            )
        except QLError as exc:
            return _error(400, exc.message, exc.line, exc.col)
        if table.truncated:
            return JSONResponse(
                {"error": "query timed out", "meta": table.meta(),
                 "rows": table.as_dicts()},
                status_code=503,
            )
        accept = request.headers.get("accept", "")
        if "application/x-ndjson" in accept:
            lines = "".join(json.dumps(r) + "\n" for r in table.as_dicts())
            return Response(
                lines,
                media_type="application/x-ndjson",
                headers={"X-Elapsed-Ms": f"{table.elapsed_ms:.3f}"},
            )
        return JSONResponse({"rows": table.as_dicts(), "meta": table.meta()})

    @app.get("/api/v1/explain")
    def explain_route(q: str):
        try:
            plan = parse(q)
            text = explain(db, plan)
        except QLError as exc:
            return _error(400, exc.message, exc.line, exc.col)
        return PlainTextResponse(text)

    @app.post("/api/v1/trees")
    async def upload_tree(request: Request):
        try:
            key = TreeKey(
                site_id=int(request.headers["x-site-id"]),
                feature_set=FeatureSet.from_name(request.headers["x-feature-set"]),
                granularity=Granularity.from_label(request.headers["x-granularity"]),
                start_ts=int(request.headers["x-start-ts"]),
            )
        except KeyError as exc:
            return _error(400, f"missing header {exc}")
        except Exception as exc:
            return _error(400, str(exc))
        length = request.headers.get("content-length")
        if length is not None and int(length) > MAX_TREE_BODY:
            return _error(413, "tree body too large")
        body = await request.body()
        if len(body) > MAX_TREE_BODY:
            return _error(413, "tree body too large")
        try:
            tree = deserialize(body)
            db.put(key, tree)
        except DecodeError as exc:
            return _error(400, f"bad tree body: {exc}")
        except Exception as exc:
            return _error(400, str(exc))
        return JSONResponse({"stored": key.text()}, status_code=201)

    @app.get("/api/v1/trees/{key_text}")
    def download_tree(key_text: str):
        try:
            key = TreeKey.from_text(key_text)
        except Exception as exc:
            return _error(400, str(exc))
        try:
            data = db.get_bytes(key)
        except NotFound:
            return _error(404, f"no tree {key_text}")
        return Response(data, media_type="application/octet-stream")

    @app.get("/api/v1/sites")
    def sites():
        return JSONResponse({"sites": db.sites()})

    @app.get("/api/v1/meta")
    def meta():
        st = db.stats()
        return JSONResponse(
            {
                "sites": db.sites(),
                "feature_sets": [fs.name for fs in db.feature_sets()],
                "granularities": [g.label for g in db.granularities()],
                "trees": st.trees,
                "bytes": st.bytes,
                "by_granularity": st.by_granularity,
                "by_feature_set": st.by_feature_set,
                "cache": {
                    "hits": st.cache_hits,
                    "misses": st.cache_misses,
                    "evictions": st.evictions,
                    "cached_trees": st.cached_trees,
                },
            }
        )

    if config.ui_dir and os.path.isdir(config.ui_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    return app


def serve(config: ServerConfig) -> None:  # pragma: no cover - long-running
    import uvicorn

    db = FlowDB(config.store_root, cache=CacheConfig(max_cached_trees=config.cache_trees))
    app = create_app(db, config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
