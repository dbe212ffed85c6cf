"""
Deterministic in-process network for tests and scenario runs.

Every node talks through one SimulatedNetwork. Requests are delivered
synchronously (the caller sees the reply or PeerUnreachable at once); one-way
posts (NOTIFY) wait in a FIFO queue until `run_until_idle`. Time is virtual,
in microseconds, and only moves when a message is sent or a tick passes.
All randomness comes from seeded generators, so the same seed replays the
same run.
"""

import hashlib
import logging
import random
from collections import deque
from typing import Callable, Deque, Dict, Iterable, List, Optional, Set, Tuple

from pydantic import BaseModel

from gin.client import GinClient
from gin.config import EventLog, Settings
from gin.dht import GinNode
from gin.errors import FrameError, LookupFailed, PeerUnreachable
from gin.signing import KeyRegistry
from gin.sync import AntiEntropy
from gin.transport import Transport

logger = logging.getLogger(__name__)

TICK_MICROS = 1_000_000
EPOCH_MICROS = 1_700_000_000 * 1_000_000


class SimMetrics(BaseModel):
    messages: int = 0
    notifications: int = 0
    dropped: int = 0
    unreachable: int = 0


class SimulatedNetwork(Transport):
    def __init__(self, seed: int = 0, latency: int = 1000, drop: float = 0.0):
        super().__init__()
        self.seed = seed
        self.latency = latency
        self.drop = drop
        self.time = EPOCH_MICROS
        self.drift: Dict[str, int] = {}
        self._rng = random.Random(f"net:{seed}")
        self._queue: Deque[Tuple[int, str, str, bytes]] = deque()
        self._groups: Optional[Dict[str, int]] = None
        self.crashed: Set[str] = set()
        self.metrics = SimMetrics()

    # --- clocks and seeds -----------------------------------------------------

    def now(self) -> int:
        return self.time

    def clock_for(self, address: str) -> Callable[[], int]:
        return lambda: self.time + self.drift.get(address, 0)

    def rng_seed_for(self, address: str) -> int:
        digest = hashlib.sha256(f"{self.seed}:{address}".encode()).digest()
        return int.from_bytes(digest[:8], "big")

    # --- faults ---------------------------------------------------------------

    def partition(self, groups: Iterable[Iterable[str]]) -> None:
        """Addresses in different groups cannot reach each other; unlisted ones reach nobody"""
        self._groups = {}
        for number, group in enumerate(groups):
            for address in group:
                self._groups[address] = number

    def groups(self) -> Dict[str, int]:
        return dict(self._groups or {})

    def heal(self) -> None:
        self._groups = None

    def crash(self, address: str) -> None:
        self.crashed.add(address)

    def restart(self, address: str) -> None:
        self.crashed.discard(address)

    def reachable(self, source: str, destination: str) -> bool:
        if destination not in self._handlers or destination in self.crashed or source in self.crashed:
            return False
        if source == destination or self._groups is None:
            return True
        side = self._groups.get(source)
        return side is not None and side == self._groups.get(destination)

    def _lost(self, source: str, destination: str) -> Optional[str]:
        if not self.reachable(source, destination):
            self.metrics.unreachable += 1
            return "unreachable"
        if source != destination and self.drop and self._rng.random() < self.drop:
            self.metrics.dropped += 1
            return "dropped"
        return None

    # --- delivery -------------------------------------------------------------

    def request(self, source: str, destination: str, frame: bytes) -> bytes:
        reason = self._lost(source, destination)
        if reason:
            raise PeerUnreachable(destination, reason)
        self.metrics.messages += 1
        self.time += self.latency
        try:
            reply = self._handlers[destination](frame)
        except FrameError as e:
            raise PeerUnreachable(destination, str(e)) from e
        self.time += self.latency
        return reply

    def post(self, source: str, destination: str, frame: bytes) -> None:
        self._queue.append((self.time + self.latency, source, destination, frame))

    @property
    def idle(self) -> bool:
        return not self._queue

    def run_until_idle(self, limit: int = 1_000_000) -> int:
        """Deliver queued posts (and whatever they cause) until the queue is empty"""
        delivered = 0
        while self._queue and delivered < limit:
            due, source, destination, frame = self._queue.popleft()
            self.time = max(self.time, due)
            if self._lost(source, destination):
                continue
            self.metrics.notifications += 1
            try:
                self._handlers[destination](frame)
            except FrameError as e:
                logger.warning(f"⚠️  [SIM] Undeliverable post to {destination}: {e}")
            delivered += 1
        return delivered


class Simulation:
    """
    A whole network of GinNodes on one SimulatedNetwork, with a client and an
    anti-entropy driver per node. One tick = one gossip round.
    """

    def __init__(
        self,
        nodes: int,
        seed: int = 0,
        settings: Optional[Settings] = None,
        latency: int = 1000,
        drop: float = 0.0,
        drift_ticks: float = 0.0,
        key_registry: Optional[KeyRegistry] = None,
    ):
        self.settings = settings or Settings(k=4, replication=3)
        self.network = SimulatedNetwork(seed=seed, latency=latency, drop=drop)
        self.rng = random.Random(f"sim:{seed}")
        self.ticks = 0
        self.last_heal: Optional[int] = None
        self.nodes: List[GinNode] = []
        self.clients: List[GinClient] = []
        self.gossip: List[AntiEntropy] = []
        for index in range(nodes):
            address = f"sim-{index:03d}"
            if drift_ticks:
                bound = int(drift_ticks * TICK_MICROS)
                self.network.drift[address] = self.rng.randint(-bound, bound)
            node = GinNode(address, self.network, self.settings)
            self.nodes.append(node)
            self.clients.append(GinClient(node, key_registry))
            self.gossip.append(AntiEntropy(node))
        self._join()

    def _join(self) -> None:
        if not self.nodes:
            return
        seed_address = self.nodes[0].address
        for node in self.nodes[1:]:
            node.bootstrap([seed_address])
        # a second pass lets early joiners learn about later ones
        for node in self.nodes:
            try:
                node.iterative_find_node(node.node_id)
            except LookupFailed:
                pass
        logger.info(f"✅ [SIM] {len(self.nodes)} node(s) joined")

    def set_event_log(self, event_log: Optional[EventLog]) -> None:
        for node in self.nodes:
            node.event_log = event_log

    # --- topology -------------------------------------------------------------

    def alive(self, index: int) -> bool:
        return self.nodes[index].address not in self.network.crashed

    def live_nodes(self) -> List[GinNode]:
        return [node for index, node in enumerate(self.nodes) if self.alive(index)]

    def partition(self, groups: Iterable[Iterable[int]]) -> None:
        groups = [list(group) for group in groups]
        self.network.partition([[self.nodes[i].address for i in group] for group in groups])
        logger.info(f"✂️  [SIM] Partition {groups}")

    def heal(self) -> None:
        groups = self.network.groups()
        self.network.heal()
        self.last_heal = self.ticks
        logger.info("🩹 [SIM] Partition healed")
        for node in self.live_nodes():
            side = groups.get(node.address)
            revived = [
                c
                for c in node.routing.contacts(include_stale=True)
                if (c.stale or groups.get(c.address) != side) and self.network.reachable(node.address, c.address)
            ]
            node.notify_reachable(revived)

    def crash(self, index: int) -> None:
        self.network.crash(self.nodes[index].address)
        logger.info(f"💥 [SIM] Node {index} crashed")

    def restart(self, index: int) -> None:
        self.network.restart(self.nodes[index].address)
        logger.info(f"🔌 [SIM] Node {index} restarted")

    # --- time -----------------------------------------------------------------

    def settle(self) -> int:
        return self.network.run_until_idle()

    def tick(self) -> None:
        """One gossip round on every live node, then delivery until quiescent"""
        self.ticks += 1
        self.network.time = max(self.network.time, EPOCH_MICROS + self.ticks * TICK_MICROS)
        for index, node in enumerate(self.nodes):
            if not self.alive(index):
                continue
            node.maintain()
            self.gossip[index].run_pending()
            self.gossip[index].gossip_round()
        self.settle()
        for index, client in enumerate(self.clients):
            if not self.alive(index):
                continue
            client.retry_degraded()
            client.resync()
        self.settle()

    def run(self, ticks: int) -> None:
        for _ in range(ticks):
            self.tick()

    # --- observation ----------------------------------------------------------

    def digests(self) -> List[str]:
        return [node.store.digest().root for node in self.live_nodes()]

    def converged(self) -> bool:
        return len(set(self.digests())) <= 1

    def run_until_converged(self, max_ticks: int) -> Optional[int]:
        """Ticks taken until every live digest is equal, or None"""
        for taken in range(max_ticks + 1):
            if self.converged():
                return taken
            if taken < max_ticks:
                self.tick()
        return None

    def transferred(self) -> int:
        return sum(g.transferred for g in self.gossip)

    def global_tuples(self):
        seen = {}
        for node in self.nodes:
            for t in node.store.dump():
                seen.setdefault(t, None)
        return list(seen)
