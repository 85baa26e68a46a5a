"""HTTP front for the JSON-RPC service: POST /rpc, CORS for the web UI."""

from __future__ import annotations

import json
import threading
from typing import Optional, Sequence

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from .service import PARSE_ERROR, RpcDispatcher, _error_response


def make_app(dispatcher: RpcDispatcher, cors_origins: Sequence[str] = ("*",)) -> FastAPI:
    app = FastAPI(openapi_url=None, docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["POST", "OPTIONS"],
        allow_headers=["*"],
    )

    @app.post("/rpc")
    async def rpc(request: Request) -> Response:
        raw = await request.body()
        try:
            payload = json.loads(raw)
        except (ValueError, UnicodeDecodeError):
            body = _error_response(None, PARSE_ERROR, "request is not valid JSON")
            return Response(json.dumps(body), media_type="application/json")
        if isinstance(payload, list):  # batch
            body = [dispatcher.dispatch(item) for item in payload]
        else:
            body = dispatcher.dispatch(payload)
        return Response(json.dumps(body), media_type="application/json")

    @app.get("/healthz")
    async def healthz() -> dict:
        return {"ok": True}

    return app


class RpcHttpServer:
    """uvicorn in a background thread; used by the node runner, the demo
    scripts and the latency tests."""

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = 8545):
        import uvicorn

        self.config = uvicorn.Config(
            app, host=host, port=port, log_level="warning", access_log=False
        )
        self.server = uvicorn.Server(self.config)
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self.server.run, daemon=True)
        self._thread.start()
        import time

        deadline = time.time() + 10
        while not self.server.started and time.time() < deadline:
            time.sleep(0.02)
        if not self.server.started:
            raise RuntimeError("RPC server failed to start")

    @property
    def port(self) -> int:
        for server in self.server.servers:
            for sock in server.sockets:
                return sock.getsockname()[1]
        return self.config.port

    def stop(self) -> None:
        self.server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=5)
