"""
The application-facing API: add and map.

`add` verifies and replicates tuples; `map` turns a GraphQuery into one remote
alpha subscription per distinct erased pattern, seeds the joins from the
subscriptions' initial pulls and then feeds every NOTIFY through the plan.
Each distinct binding reaches the callback once, however often the transport
repeats a tuple.
"""

import enum
import logging
import threading
import uuid
from typing import Callable, Dict, Iterable, List, Optional, Sequence

from pydantic import BaseModel

from gin.config import Settings
from gin.dht import GinNode, RemoteSubscription, ReplicationReport
from gin.errors import InvalidSignature, NetworkDown, NoResponders
from gin.query import AlphaNode, Binding, GraphQuery, QueryPlan, compile_query, seed
from gin.signing import KeyRegistry, VerifyStatus, verify_tuple
from gin.tuples import Tuple7, TuplePattern, tuple_id

logger = logging.getLogger(__name__)


class MapStatus(str, enum.Enum):
    SEEDING = "Seeding"
    LIVE = "Live"
    DEGRADED = "Degraded"
    CLOSED = "Closed"


class Rejection(BaseModel):
    tuple_id: str
    status: str


class AddResult(BaseModel):
    new: int = 0
    rejected: List[Rejection] = []
    reports: List[ReplicationReport] = []

    @property
    def partial(self) -> List[ReplicationReport]:
        return [report for report in self.reports if report.partial]


class MapHandle:
    """One standing query: its plan, its remote subscriptions and its callback"""

    def __init__(
        self,
        plan: QueryPlan,
        callback: Callable[[Binding], None],
        handle_id: uuid.UUID,
        tuple_filter: Optional[Callable[[Tuple7], bool]] = None,
    ):
        self.handle_id = handle_id
        self.plan = plan
        self.callback = callback
        self.tuple_filter = tuple_filter
        self.status = MapStatus.SEEDING
        self.remotes: Dict[int, RemoteSubscription] = {}
        self.delivered: List[Binding] = []
        self._lock = threading.RLock()

    @property
    def degraded_alphas(self) -> List[int]:
        return [position for position, remote in self.remotes.items() if remote.degraded]

    def results(self):
        with self._lock:
            return self.plan.results()

    def local_graph(self):
        with self._lock:
            return self.plan.local_graph()

    def _emit(self, bindings: Iterable[Binding]) -> None:
        for binding in bindings:
            self.delivered.append(binding)
            try:
                self.callback(binding)
            except Exception as e:
                logger.error(f"❌ [MAP] Callback of {str(self.handle_id)[:8]} failed: {e}")
                logger.exception("Full error:")

    def on_notify(self, alpha: AlphaNode, t: Tuple7) -> None:
        with self._lock:
            if self.status == MapStatus.CLOSED:
                return
            if self.tuple_filter is not None and not self.tuple_filter(t):
                return
            self._emit(self.plan.on_tuple(alpha, t))

    def _refresh_status(self) -> None:
        if self.status == MapStatus.CLOSED:
            return
        self.status = MapStatus.DEGRADED if self.degraded_alphas else MapStatus.LIVE


class GinClient:
    """
    Binds a GinNode (joined to a network, or alone as a single-node store)
    to the add/map surface.
    """

    def __init__(self, node: GinNode, key_registry: Optional[KeyRegistry] = None, settings: Optional[Settings] = None):
        self.node = node
        self.settings = settings or node.settings
        self.key_registry = key_registry or KeyRegistry()
        self.handles: Dict[uuid.UUID, MapHandle] = {}
        self._lock = threading.Lock()
        self._resync_pending = False
        node.reachability_listeners.append(self._on_reachable)

    # --- add ------------------------------------------------------------------

    def _check(self, t: Tuple7) -> Optional[VerifyStatus]:
        """None = accept; otherwise the status that rejects t"""
        if not t.is_publishable():
            return VerifyStatus.INVALID
        mode = self.settings.verify
        if mode == "off":
            return None
        status = verify_tuple(t, self.key_registry)
        if status == VerifyStatus.INVALID:
            if mode == "reject":
                return status
            logger.warning(f"⚠️  [ADD] Storing tuple {tuple_id(t).hex()[:12]} with invalid signature (verify=warn)")
        return None

    def add_with_report(self, tuples: Sequence[Tuple7]) -> AddResult:
        result = AddResult()
        accepted: List[Tuple7] = []
        for t in tuples:
            status = self._check(t)
            if status is None:
                accepted.append(t)
            else:
                result.rejected.append(Rejection(tuple_id=tuple_id(t).hex(), status=status.value))
                logger.warning(f"❌ [ADD] Rejected tuple {tuple_id(t).hex()[:12]}: {status.value}")
        if accepted:
            reports = self.node.store_tuples(accepted)
            for report in reports:
                if not any(report.acks.values()):
                    raise NetworkDown(f"no replica accepted tuple {report.tuple_id[:12]}")
                if report.partial:
                    logger.warning(f"⚠️  [ADD] Tuple {report.tuple_id[:12]} partially replicated; anti-entropy will complete it")
            result.reports = reports
            result.new = sum(1 for report in reports if report.is_new)
        self.node.log_event("add", {"new": result.new, "rejected": len(result.rejected), "total": len(tuples)})
        return result

    def add(self, tuples: Sequence[Tuple7]) -> int:
        """Count of tuples new to the network; rejected tuples raise after the rest are stored"""
        result = self.add_with_report(tuples)
        if result.rejected:
            raise InvalidSignature(f"{len(result.rejected)} tuple(s) rejected", result)
        return result.new

    def get(self, p: TuplePattern) -> List[Tuple7]:
        return self.node.multi_get(p)

    # --- map ------------------------------------------------------------------

    def map(
        self,
        q: GraphQuery,
        callback: Callable[[Binding], None],
        tuple_filter: Optional[Callable[[Tuple7], bool]] = None,
    ) -> MapHandle:
        plan = compile_query(q)
        handle = MapHandle(plan, callback, self.node.new_uuid(), tuple_filter)
        with self._lock:
            self.handles[handle.handle_id] = handle
        with handle._lock:
            for position, alpha in enumerate(plan.alpha_nodes):
                handle.remotes[position] = self._subscribe(handle, alpha)

            def fetch(pattern: TuplePattern) -> List[Tuple7]:
                remote = handle.remotes[plan.alpha_nodes.index(plan.alpha_for(pattern))]
                if remote.acks == 0:
                    raise NoResponders(f"no replica registered {pattern}")
                return [t for t in remote.initial if tuple_filter is None or tuple_filter(t)]

            handle._emit(seed(plan, fetch))
            handle._refresh_status()
        logger.info(
            f"🗺️  [MAP] {str(handle.handle_id)[:8]}: {len(plan.alpha_nodes)} alpha subscription(s), "
            f"{len(plan.results())} seed binding(s), status {handle.status.value}"
        )
        self.node.log_event(
            "map",
            {"handle": str(handle.handle_id), "alphas": len(plan.alpha_nodes), "seeded": len(plan.results())},
        )
        return handle

    def _subscribe(self, handle: MapHandle, alpha: AlphaNode) -> RemoteSubscription:
        return self.node.subscribe_remote(alpha.pattern, lambda t, a=alpha: handle.on_notify(a, t))

    def unmap(self, handle: MapHandle) -> None:
        with handle._lock:
            if handle.status == MapStatus.CLOSED:
                return
            handle.status = MapStatus.CLOSED
            remotes = list(handle.remotes.values())
        for remote in remotes:
            self.node.unsubscribe_remote(remote)
        with self._lock:
            self.handles.pop(handle.handle_id, None)
        self.node.log_event("unmap", {"handle": str(handle.handle_id)})

    def retry_degraded(self) -> int:
        """Re-place alpha subscriptions that lack replicas; returns how many were retried"""
        retried = 0
        with self._lock:
            handles = list(self.handles.values())
        for handle in handles:
            with handle._lock:
                if handle.status == MapStatus.CLOSED:
                    continue
                for position in handle.degraded_alphas:
                    alpha = handle.plan.alpha_nodes[position]
                    old = handle.remotes[position]
                    fresh = self._subscribe(handle, alpha)
                    if fresh.acks <= old.acks:
                        self.node.unsubscribe_remote(fresh)
                        continue
                    self.node.unsubscribe_remote(old)
                    handle.remotes[position] = fresh
                    for t in fresh.initial:
                        if handle.tuple_filter is None or handle.tuple_filter(t):
                            handle._emit(handle.plan.on_tuple(alpha, t))
                    retried += 1
                handle._refresh_status()
        if retried:
            logger.info(f"🔁 [MAP] Re-placed {retried} degraded alpha subscription(s)")
        return retried

    def _on_reachable(self, peers) -> None:
        # NOTIFYs sent while a peer was cut off are lost; pull again after a heal
        self._resync_pending = True

    def resync(self, force: bool = False) -> int:
        """Re-pull every alpha pattern of the open handles; returns new bindings delivered"""
        if not (force or self._resync_pending):
            return 0
        self._resync_pending = False
        with self._lock:
            handles = list(self.handles.values())
        before = sum(len(handle.delivered) for handle in handles)
        for handle in handles:
            for alpha in handle.plan.alpha_nodes:
                try:
                    tuples = self.node.multi_get(alpha.pattern)
                except NoResponders as e:
                    logger.warning(f"⚠️  [MAP] Resync of {alpha.pattern} failed: {e}")
                    self._resync_pending = True
                    continue
                for t in tuples:
                    handle.on_notify(alpha, t)
        gained = sum(len(handle.delivered) for handle in handles) - before
        if gained:
            logger.info(f"🔁 [MAP] Resync delivered {gained} binding(s)")
        return gained

    # --- keys -----------------------------------------------------------------

    def publish_keys(self, timestamp: int) -> int:
        """Store the key registry in the graph as has-key / key-bytes tuples"""
        return self.add(self.key_registry.to_tuples(timestamp))

    def keys_from_graph(self, signers: Iterable[uuid.UUID]) -> KeyRegistry:
        return KeyRegistry.from_graph(signers, self.node.multi_get)

    def close(self) -> None:
        for handle in list(self.handles.values()):
            self.unmap(handle)
