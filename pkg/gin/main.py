"""
GIN node daemon: FastAPI application around one GinNode.

POST /rpc carries binary RPC frames between nodes; /add, /get, /map and
/digest are the ad-hoc verbs used by the command line. The lifespan starts
the maintenance loop (routing upkeep, gossip rounds, degraded-map retries).
"""

import asyncio
import json
import logging
import os
import queue
import sys
import time
from contextlib import asynccontextmanager
from typing import Any, List, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response, StreamingResponse

from gin.client import GinClient
from gin.config import EventLog, Settings
from gin.dht import GinNode
from gin.errors import FrameError, GinError
from gin.models import (
    AddRequest,
    AddResponse,
    BindingLine,
    DigestResponse,
    GetRequest,
    GetResponse,
    HealthResponse,
    MapRequest,
)
from gin.query import Binding, parse_query_text
from gin.routing import node_id_from_seed
from gin.signing import KeyRegistry
from gin.store import TupleStore
from gin.sync import AntiEntropy
from gin.transport import FRAME_CONTENT_TYPE, HttpTransport, Transport
from gin.tuples import format_tuple_line, parse_pattern, read_tuple_lines

logger = logging.getLogger(__name__)


class NodeRuntime:
    """Everything one daemon owns: node, client, anti-entropy, event log"""

    def __init__(
        self,
        settings: Settings,
        address: str,
        transport: Optional[Transport] = None,
        bootstrap: Optional[List[str]] = None,
        id_seed: Optional[str] = None,
        log_path: Optional[str] = None,
        store_path: Optional[str] = None,
    ):
        self.settings = settings
        self.bootstrap_addresses = bootstrap or []
        self.transport = transport or HttpTransport(timeout=settings.request_timeout, retries=settings.retries)
        self.event_log = EventLog(path=log_path) if log_path else None
        self.store = TupleStore(path=store_path)
        registry = KeyRegistry.load(settings.keys_file) if settings.keys_file else KeyRegistry()
        self.node = GinNode(
            address,
            self.transport,
            settings,
            node_id=node_id_from_seed(id_seed) if id_seed else None,
            store=self.store,
            event_log=self.event_log,
        )
        self.client = GinClient(self.node, registry, settings)
        self.gossip = AntiEntropy(self.node)
        self._stopping = False

    def join(self) -> int:
        if not self.bootstrap_addresses:
            logger.info(f"🌱 [DHT] {self.node.name} starting a new network at {self.node.address}")
            return 0
        return self.node.bootstrap(self.bootstrap_addresses)

    def maintenance_round(self) -> None:
        """One pass of background upkeep; a failing step never stops the others"""
        for step in (self.node.maintain, self.gossip.run_pending, self.gossip.gossip_round, self.client.retry_degraded, self.client.resync):
            try:
                step()
            except Exception as e:
                logger.error(f"❌ [NODE] {step.__name__} failed: {e}")

    async def maintenance_loop(self) -> None:
        interval = self.settings.round_interval
        while not self._stopping:
            # a reachability change wakes the loop early (merge fast path)
            woke = await asyncio.to_thread(self.gossip.wakeup.wait, interval)
            self.gossip.wakeup.clear()
            if self._stopping:
                break
            if woke:
                await asyncio.to_thread(self.gossip.run_pending)
            else:
                await asyncio.to_thread(self.maintenance_round)

    def close(self) -> None:
        self._stopping = True
        self.gossip.wakeup.set()
        self.client.close()
        if isinstance(self.transport, HttpTransport):
            self.transport.close()
        self.store.close()
        if self.event_log is not None:
            self.event_log.close()


def binding_line(binding: Binding) -> str:
    line = BindingLine(
        binding={name: str(value) for name, value in binding.values},
        witnesses=[w.hex() for w in binding.witnesses],
    )
    return line.model_dump_json() + "\n"


def create_app(runtime: NodeRuntime, background: bool = True) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        logger.info(f"🚀 Starting GIN node {runtime.node.name} at {runtime.node.address}...")
        logger.info(f"📋 Python version: {sys.version.split()[0]}")
        logger.info(f"📋 Working directory: {os.getcwd()}")
        logger.info(
            f"📋 k={runtime.settings.k} alpha={runtime.settings.alpha} r={runtime.settings.replication} "
            f"verify={runtime.settings.verify}"
        )
        task = asyncio.create_task(runtime.maintenance_loop()) if background else None
        logger.info("✅ Startup complete - ready to receive frames")
        yield
        logger.info("🛑 Shutting down...")
        runtime._stopping = True
        runtime.gossip.wakeup.set()
        if task is not None:
            task.cancel()
            try:
                await task
            except asyncio.CancelledError:
                pass
        runtime.close()

    app = FastAPI(
        title="GIN node",
        description="Add-only hypergraph tuple store over a Kademlia DHT",
        version="1.0.0",
        lifespan=lifespan,
    )
    app.state.runtime = runtime

    @app.exception_handler(RequestValidationError)
    async def validation_exception_handler(request: Request, exc: RequestValidationError):
        body: Any = "N/A"
        try:
            body = await request.json()
            logger.warning(f"❌ 422 Validation Error. Incoming Body: {json.dumps(body)}")
        except Exception:
            logger.warning("❌ 422 Error (Could not parse body)")
        return JSONResponse(status_code=422, content={"detail": exc.errors(), "body": body})

    @app.exception_handler(GinError)
    async def gin_error_handler(request: Request, exc: GinError):
        status = 503 if exc.exit_code == 4 else 400
        logger.warning(f"❌ [{request.url.path}] {type(exc).__name__}: {exc}")
        return JSONResponse(status_code=status, content={"error": type(exc).__name__, "detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    async def health_check():
        node = runtime.node
        return HealthResponse(
            status="healthy",
            service="gin-node",
            node=f"{node.node_id:040x}",
            address=node.address,
            contacts=len(node.live_contacts()),
            tuples=len(node.store),
            subscriptions=node.store.subscription_count(),
        )

    @app.post("/rpc")
    async def rpc(request: Request):
        frame = await request.body()
        try:
            reply = await asyncio.to_thread(runtime.node.handle_frame, frame)
        except FrameError as e:
            return JSONResponse(status_code=400, content={"error": "FrameError", "detail": str(e)})
        return Response(content=reply, media_type=FRAME_CONTENT_TYPE)

    @app.post("/add", response_model=AddResponse)
    async def add(payload: AddRequest):
        tuples = read_tuple_lines(payload.tuples)
        result = await asyncio.to_thread(runtime.client.add_with_report, tuples)
        logger.info(f"📥 [ADD] {result.new} new of {len(tuples)} received, {len(result.rejected)} rejected")
        return AddResponse(
            new=result.new,
            received=len(tuples),
            rejected=[r.model_dump() for r in result.rejected],
            partial=[report.tuple_id for report in result.partial],
        )

    @app.post("/get", response_model=GetResponse)
    async def get(payload: GetRequest):
        try:
            pattern = parse_pattern(payload.pattern)
        except ValueError as e:
            return JSONResponse(status_code=400, content={"error": "PatternError", "detail": str(e)})
        tuples = await asyncio.to_thread(runtime.client.get, pattern)
        lines = sorted(format_tuple_line(t) for t in tuples)
        return GetResponse(count=len(lines), tuples=lines)

    @app.get("/digest", response_model=DigestResponse)
    async def digest():
        d = runtime.node.store.digest()
        return DigestResponse(node=runtime.node.name, count=d.count, root=d.root)

    @app.post("/map")
    async def map_query(payload: MapRequest):
        q = parse_query_text(payload.query, payload.projected)
        arrivals: "queue.Queue[Binding]" = queue.Queue()
        handle = await asyncio.to_thread(runtime.client.map, q, arrivals.put)
        deadline = time.monotonic() + payload.duration if payload.duration else None
        settle = runtime.settings.settle_timeout

        def stream():
            try:
                while deadline is None or time.monotonic() < deadline:
                    try:
                        binding = arrivals.get(timeout=settle)
                    except queue.Empty:
                        continue
                    yield binding_line(binding)
                # whatever arrived right before the deadline
                while not arrivals.empty():
                    yield binding_line(arrivals.get_nowait())
            finally:
                runtime.client.unmap(handle)

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    return app
