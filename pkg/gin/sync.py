"""
Anti-entropy: digest exchange and pull/push of missing tuples.

Each round picks `fanout` random live contacts from the routing table,
swaps full sorted-id digests, pulls what is missing locally and pushes what
the peer lacks. Pulled tuples go through the normal store insert, so alpha
subscriptions fire and standing queries heal after a partition. Pulled
tuples are also re-replicated to the placement-key owners this node knows of.

Reachability changes (a partition healing, a stale contact answering again)
schedule an extra round toward the revived peers ahead of the cadence.
"""

import logging
import threading
from typing import Dict, Iterable, List, Optional

from pydantic import BaseModel, Field

from gin.config import Settings
from gin.dht import GinNode, placement_keys
from gin.errors import GinError, PeerUnreachable
from gin.routing import Contact
from gin.store import diff
from gin.tuples import Tuple7

logger = logging.getLogger(__name__)


class GossipConfig(BaseModel):
    round_interval: float = Field(1.0, gt=0)
    fanout: int = Field(1, gt=0)
    max_pull_batch: int = Field(256, gt=0)

    @classmethod
    def from_settings(cls, settings: Settings) -> "GossipConfig":
        return cls(round_interval=settings.round_interval, fanout=settings.fanout, max_pull_batch=settings.max_pull_batch)


class RoundReport(BaseModel):
    peers: List[str] = []
    unreachable: List[str] = []
    pulled: int = 0
    pushed: int = 0
    new_locally: int = 0
    re_replicated: int = 0

    @property
    def transferred(self) -> int:
        return self.pulled + self.pushed


def batches(items: List, size: int) -> Iterable[List]:
    for start in range(0, len(items), size):
        yield items[start : start + size]


class AntiEntropy:
    def __init__(self, node: GinNode, config: Optional[GossipConfig] = None):
        self.node = node
        self.config = config or GossipConfig.from_settings(node.settings)
        self._pending: Dict[int, Contact] = {}
        self._pending_lock = threading.Lock()
        self._round_lock = threading.Lock()
        self.wakeup = threading.Event()
        self.rounds = 0
        self.transferred = 0
        node.reachability_listeners.append(self.on_reachability_change)

    # --- scheduling -----------------------------------------------------------

    def on_reachability_change(self, peers: List[Contact]) -> None:
        with self._pending_lock:
            for peer in peers:
                self._pending[peer.node_id] = peer
        if peers:
            self.wakeup.set()

    @property
    def has_pending(self) -> bool:
        return bool(self._pending)

    def run_pending(self) -> Optional[RoundReport]:
        """Merge fast path: one round toward every peer that became reachable"""
        with self._pending_lock:
            peers = sorted(self._pending.values(), key=lambda c: c.node_id)
            self._pending.clear()
        if not peers:
            return None
        logger.info(f"🔀 [SYNC] {self.node.name}: fast-path round toward {len(peers)} revived peer(s)")
        return self.gossip_round(peers)

    def choose_peers(self) -> List[Contact]:
        live = sorted(self.node.live_contacts(), key=lambda c: c.node_id)
        if len(live) <= self.config.fanout:
            return live
        return self.node.rng.sample(live, self.config.fanout)

    # --- one round ------------------------------------------------------------

    def gossip_round(self, peers: Optional[List[Contact]] = None) -> RoundReport:
        report = RoundReport()
        with self._round_lock:
            targets = peers if peers is not None else self.choose_peers()
            for peer in targets:
                try:
                    self._exchange(peer, report)
                    report.peers.append(peer.short())
                except PeerUnreachable as e:
                    report.unreachable.append(peer.short())
                    logger.info(f"⚠️  [SYNC] {self.node.name}: peer {peer.short()} skipped: {e.reason}")
                except GinError as e:
                    report.unreachable.append(peer.short())
                    logger.warning(f"⚠️  [SYNC] {self.node.name}: exchange with {peer.short()} failed: {type(e).__name__}: {e}")
            self.rounds += 1
            self.transferred += report.transferred
        if report.transferred:
            self.node.log_event(
                "gossip",
                {"peers": report.peers, "pulled": report.pulled, "pushed": report.pushed, "new": report.new_locally},
            )
        return report

    def _exchange(self, peer: Contact, report: RoundReport) -> None:
        local = self.node.store.digest()
        remote = self.node.exchange_digest(peer, local)
        missing_locally, missing_remotely = diff(local, remote)
        size = self.config.max_pull_batch

        pulled: List[Tuple7] = []
        for batch in batches(sorted(missing_locally), size):
            tuples = self.node.pull_tuples(peer, batch)
            report.pulled += len(tuples)
            for t in tuples:
                if self.node.store.insert(t):
                    report.new_locally += 1
                    pulled.append(t)

        outgoing = self.node.store.get_many(sorted(missing_remotely))
        for batch in batches(outgoing, size):
            self.node.push_tuples(peer, batch)
            report.pushed += len(batch)

        if pulled:
            report.re_replicated += self._re_replicate(pulled, exclude={peer.node_id})

    def _re_replicate(self, tuples: List[Tuple7], exclude: set) -> int:
        """Send pulled tuples to the other owners of keys this node is responsible for"""
        per_node: Dict[int, List[Tuple7]] = {}
        contacts: Dict[int, Contact] = {}
        for t in tuples:
            owners = set()
            for key in placement_keys(t):
                targets = self.node.responsible_targets(key)
                if targets is None:
                    continue
                for contact in targets:
                    if contact.node_id == self.node.node_id or contact.node_id in exclude:
                        continue
                    if contact.node_id not in owners:
                        owners.add(contact.node_id)
                        contacts[contact.node_id] = contact
                        per_node.setdefault(contact.node_id, []).append(t)
        sent = 0
        for node_id in sorted(per_node):
            try:
                self.node.push_tuples(contacts[node_id], per_node[node_id])
                sent += len(per_node[node_id])
            except PeerUnreachable as e:
                logger.info(f"⚠️  [SYNC] {self.node.name}: re-replication to {contacts[node_id].short()} failed: {e.reason}")
        return sent
