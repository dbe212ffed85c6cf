"""
Kademlia node extended with tuple placement, multi_get and remote alpha
subscriptions.

Placement: every tuple is stored under K(source), K(edge), K(target),
K(context) and the truncated tuple id, where K(u) is the 160-bit truncation of
SHA-256(u). A pattern routes by K of its highest-priority fixed slot
(source > target > context > edge), so any pattern with at least one fixed
slot meets every tuple it matches at the same r nodes.
"""

import logging
import random
import threading
import uuid
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from pydantic import BaseModel

from gin.config import EventLog, Settings
from gin.errors import (
    BootstrapTimeout,
    FrameError,
    GinError,
    LookupFailed,
    MalformedTuple,
    NoResponders,
    PartialStore,
    PeerUnreachable,
    UnroutablePattern,
)
from gin.routing import Contact, RoutingTable, key_for_bytes, random_node_id, xor_distance
from gin.store import AlphaSubscription, Digest, TupleStore
from gin.transport import Transport
from gin.tuples import CONTEXT, EDGE, SOURCE, TARGET, Tuple7, TuplePattern, tuple_id
from gin.wire import (
    RpcKind,
    RpcMessage,
    decode_contacts,
    decode_digest,
    decode_frame,
    decode_ids,
    decode_key,
    decode_pattern,
    decode_tuples,
    decode_uuid,
    encode_contacts,
    encode_digest,
    encode_frame,
    encode_ids,
    encode_key,
    encode_pattern,
    encode_tuples,
    encode_uuid,
    error,
    ok,
    split_status,
)

logger = logging.getLogger(__name__)

ROUTING_PRIORITY = (SOURCE, TARGET, CONTEXT, EDGE)


def uuid_key(value: uuid.UUID) -> int:
    return key_for_bytes(value.bytes)


def placement_keys(t: Tuple7) -> Set[int]:
    keys = {uuid_key(value) for value in t.slots}
    keys.add(int.from_bytes(tuple_id(t)[:20], "big"))
    return keys


def routing_key_for(p: TuplePattern) -> int:
    for position in ROUTING_PRIORITY:
        value = p.slots[position]
        if value is not None:
            return uuid_key(value)
    raise UnroutablePattern(f"pattern {p} has no fixed slot")


class ReplicationReport(BaseModel):
    tuple_id: str
    acks: Dict[str, int]
    inserted: int = 0
    duplicates: int = 0

    @property
    def partial(self) -> bool:
        return any(count < 1 for count in self.acks.values())

    @property
    def is_new(self) -> bool:
        return self.inserted > 0

    def raise_for_status(self) -> None:
        if self.partial:
            missing = [key for key, count in self.acks.items() if count < 1]
            raise PartialStore(f"tuple {self.tuple_id[:12]} has no replica for {len(missing)} key(s)", self)


class RemoteSubscription:
    """Aggregate of the r alpha registrations made for one pattern"""

    def __init__(self, pattern: TuplePattern, listener_id: uuid.UUID, expected: int):
        self.pattern = pattern
        self.listener_id = listener_id
        self.expected = expected
        self.registrations: List[Tuple[Contact, uuid.UUID]] = []
        self.initial: List[Tuple7] = []

    @property
    def acks(self) -> int:
        return len(self.registrations)

    @property
    def degraded(self) -> bool:
        return self.acks == 0 or self.acks < self.expected


class GinNode:
    """
    One DHT participant. Incoming frames are handled one at a time
    (`handle_frame` holds the node lock); outgoing calls go through the
    transport and never hold it.
    """

    def __init__(
        self,
        address: str,
        transport: Transport,
        settings: Optional[Settings] = None,
        node_id: Optional[int] = None,
        store: Optional[TupleStore] = None,
        event_log: Optional[EventLog] = None,
    ):
        self.address = address
        self.transport = transport
        self.settings = settings or Settings()
        seed = transport.rng_seed_for(address)
        self.rng = random.Random(seed) if seed is not None else random.Random()
        self.node_id = node_id if node_id is not None else random_node_id(self.rng)
        self.clock = transport.clock_for(address)
        self.routing = RoutingTable(self.node_id, k=self.settings.k)
        self.store = store or TupleStore()
        self.store.notifier = self._notify_subscriber
        self.store.clock = self.clock
        self.store.id_factory = self.new_uuid
        self.event_log = event_log
        self._lock = threading.RLock()
        self._listeners: Dict[uuid.UUID, Callable[[Tuple7], None]] = {}
        self.reachability_listeners: List[Callable[[List[Contact]], None]] = []
        self.rpc_count = 0
        transport.register(address, self.handle_frame)

    @property
    def contact(self) -> Contact:
        return Contact(node_id=self.node_id, address=self.address, last_seen=self.clock())

    @property
    def name(self) -> str:
        return f"{self.node_id:040x}"[:8]

    def new_uuid(self) -> uuid.UUID:
        return uuid.UUID(int=self.rng.getrandbits(128), version=4)

    def log_event(self, event: str, payload: Optional[dict] = None) -> None:
        if self.event_log is not None:
            self.event_log.emit(self.clock(), self.name, event, payload)

    # --- contact bookkeeping --------------------------------------------------

    def _saw(self, contact: Contact) -> None:
        if contact.node_id == self.node_id:
            return
        existing = self.routing.get(contact.node_id)
        seen = contact.model_copy(update={"last_seen": self.clock(), "stale": False})
        self.routing.add_contact(seen)
        if existing is not None and existing.stale:
            self._reachable([seen])

    def _reachable(self, contacts: List[Contact]) -> None:
        if not contacts:
            return
        logger.info(f"🔗 [DHT] {self.name}: {len(contacts)} peer(s) reachable again")
        self.log_event("reachable", {"peers": sorted(c.short() for c in contacts)})
        for listener in list(self.reachability_listeners):
            listener(contacts)

    def notify_reachable(self, contacts: Iterable[Contact]) -> None:
        """Membership change reported from outside (simulator heal, operator)"""
        revived = []
        for contact in contacts:
            if contact.node_id == self.node_id:
                continue
            known = self.routing.get(contact.node_id)
            if known is None:
                self.routing.add_contact(contact.model_copy(update={"stale": False}))
                revived.append(contact)
            else:
                # reported reachable: counts even if we never saw it fail
                self.routing.mark_live(contact.node_id, self.clock())
                revived.append(known)
        self._reachable(revived)

    # --- outgoing RPCs --------------------------------------------------------

    def _call(self, contact: Contact, kind: RpcKind, payload: bytes = b"") -> bytes:
        request = RpcMessage(kind=kind, request_id=self.new_uuid(), sender=self.contact, payload=payload)
        self.rpc_count += 1
        try:
            raw = self.transport.request(self.address, contact.address, encode_frame(request))
            response = decode_frame(raw)
        except (PeerUnreachable, FrameError) as e:
            self.routing.mark_stale(contact.node_id)
            if isinstance(e, PeerUnreachable):
                raise
            raise PeerUnreachable(contact.address, str(e)) from e
        if not response.is_response or response.request_id != request.request_id:
            self.routing.mark_stale(contact.node_id)
            raise PeerUnreachable(contact.address, "response does not echo the request")
        if response.sender.node_id != self.node_id:
            self._saw(response.sender)
        try:
            success, body, message = split_status(response.payload)
        except FrameError as e:
            self.routing.mark_stale(contact.node_id)
            raise PeerUnreachable(contact.address, str(e)) from e
        if not success:
            raise PeerUnreachable(contact.address, f"remote error: {message}")
        return body

    def ping(self, contact: Contact) -> bool:
        try:
            self._call(contact, RpcKind.PING)
            return True
        except PeerUnreachable:
            return False

    def _decode(self, contact: Contact, decoder: Callable[..., Any], body: bytes, *args: Any) -> Any:
        """A reply body that does not decode counts as an unreachable peer"""
        try:
            return decoder(body, *args)
        except FrameError as e:
            self.routing.mark_stale(contact.node_id)
            raise PeerUnreachable(contact.address, f"bad reply: {e}") from e

    def _find_node_rpc(self, contact: Contact, target: int) -> List[Contact]:
        body = self._call(contact, RpcKind.FIND_NODE, encode_key(target))
        contacts, _ = self._decode(contact, decode_contacts, body)
        return contacts

    def _store_rpc(self, contact: Contact, tuples: Sequence[Tuple7]) -> List[bool]:
        body = self._call(contact, RpcKind.STORE_TUPLE, encode_tuples(tuples))
        return [flag == 1 for flag in body[4:]]

    def _multi_get_rpc(self, contact: Contact, p: TuplePattern) -> List[Tuple7]:
        body = self._call(contact, RpcKind.MULTI_GET, encode_pattern(p))
        tuples, _ = self._decode(contact, decode_tuples, body)
        return tuples

    def exchange_digest(self, contact: Contact, digest: Digest) -> Digest:
        body = self._call(contact, RpcKind.DIGEST, encode_digest(digest))
        remote, _ = self._decode(contact, decode_digest, body)
        return remote

    def pull_tuples(self, contact: Contact, ids: Sequence[bytes]) -> List[Tuple7]:
        body = self._call(contact, RpcKind.PULL_TUPLES, encode_ids(ids))
        tuples, _ = self._decode(contact, decode_tuples, body)
        return tuples

    def push_tuples(self, contact: Contact, tuples: Sequence[Tuple7]) -> List[bool]:
        return self._store_rpc(contact, tuples)

    # --- incoming frames ------------------------------------------------------

    def handle_frame(self, frame: bytes) -> bytes:
        try:
            message = decode_frame(frame)
        except FrameError as e:
            logger.warning(f"⚠️  [DHT] {self.name}: undecodable frame: {e}")
            raise
        if message.kind == RpcKind.NOTIFY:
            # listeners run outside the node lock; they may publish in turn
            payload = self._handle_notify(message)
        else:
            with self._lock:
                try:
                    payload = self._dispatch(message)
                except (GinError, ValueError) as e:
                    logger.warning(f"⚠️  [DHT] {self.name}: {message.kind.name} failed: {e}")
                    payload = error(str(e))
        if message.sender.node_id != self.node_id:
            with self._lock:
                self._saw(message.sender)
        return encode_frame(message.reply(self.contact, payload))

    def _dispatch(self, message: RpcMessage) -> bytes:
        kind = message.kind
        data = message.payload
        if kind == RpcKind.PING:
            return ok()
        if kind == RpcKind.FIND_NODE:
            target, _ = decode_key(data)
            closest = [c for c in self.routing.find_closest(target, self.settings.k) if c.node_id != message.sender.node_id]
            if message.sender.node_id != self.node_id:
                closest.append(self.contact)
                closest.sort(key=lambda c: xor_distance(c.node_id, target))
            return ok(encode_contacts(closest[: self.settings.k]))
        if kind == RpcKind.STORE_TUPLE:
            tuples, _ = decode_tuples(data)
            flags = []
            for t in tuples:
                try:
                    flags.append(1 if self.store.insert(t) else 0)
                except MalformedTuple as e:
                    logger.warning(f"⚠️  [STORE] {self.name}: rejected tuple: {e}")
                    flags.append(0)
            if any(flags):
                self.log_event("stored", {"new": sum(flags), "received": len(tuples)})
            return ok(len(flags).to_bytes(4, "big") + bytes(flags))
        if kind == RpcKind.MULTI_GET:
            pattern, _ = decode_pattern(data)
            return ok(encode_tuples(self.store.scan(pattern)))
        if kind == RpcKind.SUBSCRIBE:
            listener_id, offset = decode_uuid(data)
            pattern, _ = decode_pattern(data, offset)
            endpoint = (message.sender.address, listener_id)
            sub_id, initial = self.store.register_alpha(pattern, endpoint)
            self.log_event("subscribed", {"pattern": str(pattern), "initial": len(initial)})
            return ok(encode_uuid(sub_id) + encode_tuples(initial))
        if kind == RpcKind.UNSUBSCRIBE:
            sub_id, _ = decode_uuid(data)
            return ok(bytes([1 if self.store.unregister_alpha(sub_id) else 0]))
        if kind == RpcKind.DIGEST:
            return ok(encode_digest(self.store.digest()))
        if kind == RpcKind.PULL_TUPLES:
            ids, _ = decode_ids(data)
            return ok(encode_tuples(self.store.get_many(ids)))
        return error(f"unsupported kind {kind}")

    def _handle_notify(self, message: RpcMessage) -> bytes:
        try:
            listener_id, offset = decode_uuid(message.payload)
            tuples, _ = decode_tuples(message.payload, offset)
        except FrameError as e:
            return error(str(e))
        listener = self._listeners.get(listener_id)
        if listener is None:
            return ok()
        for t in tuples:
            try:
                listener(t)
            except Exception as e:
                logger.error(f"❌ [MAP] {self.name}: listener {listener_id} failed: {e}")
                logger.exception("Full error:")
        return ok()

    def _notify_subscriber(self, sub: AlphaSubscription, t: Tuple7) -> None:
        address, listener_id = sub.endpoint
        message = RpcMessage(
            kind=RpcKind.NOTIFY,
            request_id=self.new_uuid(),
            sender=self.contact,
            payload=encode_uuid(listener_id) + encode_tuples([t]),
        )
        self.transport.post(self.address, address, encode_frame(message))

    # --- joining --------------------------------------------------------------

    def bootstrap(self, addresses: Iterable[str]) -> int:
        """Ping each seed address, then look ourselves up; returns contacts known"""
        reached = 0
        for address in addresses:
            if address == self.address:
                continue
            probe = Contact(node_id=self.node_id ^ 1, address=address)
            try:
                self._call(probe, RpcKind.PING)
                reached += 1
            except PeerUnreachable as e:
                logger.warning(f"⚠️  [DHT] Bootstrap peer {address} unreachable: {e.reason}")
        if reached == 0 and addresses:
            raise BootstrapTimeout("no bootstrap peer answered")
        if len(self.routing):
            try:
                self.iterative_find_node(self.node_id)
            except LookupFailed:
                pass
        logger.info(f"✅ [DHT] {self.name} bootstrapped with {len(self.routing)} contact(s)")
        return len(self.routing)

    # --- lookups --------------------------------------------------------------

    def iterative_find_node(self, target: int) -> List[Contact]:
        k = self.settings.k
        me = self.contact
        shortlist: Dict[int, Contact] = {c.node_id: c for c in self.routing.find_closest(target, k)}
        if not shortlist:
            return [me]
        queried: Set[int] = set()
        failed: Set[int] = set()
        responded: Dict[int, Contact] = {}

        def distance(c: Contact) -> int:
            return xor_distance(c.node_id, target)

        while True:
            ranked = sorted((c for c in shortlist.values() if c.node_id not in failed), key=distance)
            pending = [c for c in ranked[:k] if c.node_id not in queried][: self.settings.alpha]
            if not pending:
                break
            for contact in pending:
                queried.add(contact.node_id)
                try:
                    found = self._find_node_rpc(contact, target)
                except PeerUnreachable:
                    failed.add(contact.node_id)
                    continue
                responded[contact.node_id] = contact
                for candidate in found:
                    if candidate.node_id != self.node_id and candidate.node_id not in shortlist:
                        shortlist[candidate.node_id] = candidate
        if not responded:
            raise LookupFailed(f"no contact answered a lookup for {target:040x}")
        result = sorted(list(responded.values()) + [me], key=distance)
        return result[:k]

    def _targets(self, key: int, cache: Optional[Dict[int, List[Contact]]] = None) -> List[Contact]:
        if cache is not None and key in cache:
            return cache[key]
        try:
            closest = self.iterative_find_node(key)
        except LookupFailed:
            closest = [self.contact]
        targets = closest[: self.settings.replication]
        if cache is not None:
            cache[key] = targets
        return targets

    def responsible_targets(self, key: int) -> Optional[List[Contact]]:
        """
        The r closest nodes for key from the local table (self included) when
        this node is one of them, else None.
        """
        r = self.settings.replication
        candidates = self.routing.find_closest(key, r) + [self.contact]
        candidates.sort(key=lambda c: xor_distance(c.node_id, key))
        closest = candidates[:r]
        if any(c.node_id == self.node_id for c in closest):
            return closest
        return None

    # --- tuple placement and retrieval ---------------------------------------

    def store_tuple(self, t: Tuple7, strict: bool = False) -> ReplicationReport:
        """With strict=True a key left without any replica raises PartialStore"""
        report = self.store_tuples([t])[0]
        if strict:
            report.raise_for_status()
        return report

    def store_tuples(self, tuples: Sequence[Tuple7]) -> List[ReplicationReport]:
        """Replicate each tuple under all its placement keys; one STORE per node"""
        cache: Dict[int, List[Contact]] = {}
        plan: List[Dict[int, List[Contact]]] = []
        per_node: Dict[int, Tuple[Contact, List[int]]] = {}
        for index, t in enumerate(tuples):
            by_key = {key: self._targets(key, cache) for key in sorted(placement_keys(t))}
            plan.append(by_key)
            for targets in by_key.values():
                for contact in targets:
                    entry = per_node.setdefault(contact.node_id, (contact, []))
                    if index not in entry[1]:
                        entry[1].append(index)

        outcome: Dict[Tuple[int, int], Optional[bool]] = {}
        for node_id, (contact, indexes) in per_node.items():
            try:
                flags = self._store_rpc(contact, [tuples[i] for i in indexes])
            except PeerUnreachable as e:
                logger.warning(f"⚠️  [DHT] STORE to {contact.short()} failed: {e.reason}")
                flags = [None] * len(indexes)
            for i, flag in zip(indexes, flags):
                outcome[(i, node_id)] = flag

        reports = []
        for index, t in enumerate(tuples):
            acks: Dict[str, int] = {}
            acked_nodes: Set[int] = set()
            for key, targets in plan[index].items():
                acked = [c.node_id for c in targets if outcome.get((index, c.node_id)) is not None]
                acks[f"{key:040x}"] = len(acked)
                acked_nodes.update(acked)
            inserted = sum(1 for n in acked_nodes if outcome[(index, n)])
            reports.append(
                ReplicationReport(
                    tuple_id=tuple_id(t).hex(),
                    acks=acks,
                    inserted=inserted,
                    duplicates=len(acked_nodes) - inserted,
                )
            )
        return reports

    def multi_get(self, p: TuplePattern) -> List[Tuple7]:
        key = routing_key_for(p)
        targets = self._targets(key)
        results: Dict[bytes, Tuple7] = {}
        answered = 0
        for contact in targets:
            try:
                tuples = self._multi_get_rpc(contact, p)
            except PeerUnreachable as e:
                logger.warning(f"⚠️  [DHT] MULTI_GET to {contact.short()} failed: {e.reason}")
                continue
            answered += 1
            for t in tuples:
                results.setdefault(tuple_id(t), t)
        if not answered:
            raise NoResponders(f"none of {len(targets)} replica(s) answered for {p}")
        return list(results.values())

    def subscribe_remote(self, p: TuplePattern, callback: Callable[[Tuple7], None]) -> RemoteSubscription:
        key = routing_key_for(p)
        listener_id = self.new_uuid()
        self._listeners[listener_id] = callback
        targets = self._targets(key)
        handle = RemoteSubscription(p, listener_id, expected=len(targets))
        seen: Set[bytes] = set()
        payload = encode_uuid(listener_id) + encode_pattern(p)
        for contact in targets:
            try:
                body = self._call(contact, RpcKind.SUBSCRIBE, payload)
                sub_id, offset = self._decode(contact, decode_uuid, body)
                initial, _ = self._decode(contact, decode_tuples, body, offset)
            except PeerUnreachable as e:
                logger.warning(f"⚠️  [DHT] SUBSCRIBE at {contact.short()} failed: {e}")
                continue
            handle.registrations.append((contact, sub_id))
            for t in initial:
                tid = tuple_id(t)
                if tid not in seen:
                    seen.add(tid)
                    handle.initial.append(t)
        if handle.degraded:
            logger.warning(f"⚠️  [DHT] Degraded subscription for {p}: {handle.acks}/{handle.expected} acks")
        return handle

    def unsubscribe_remote(self, handle: RemoteSubscription) -> None:
        self._listeners.pop(handle.listener_id, None)
        for contact, sub_id in handle.registrations:
            try:
                self._call(contact, RpcKind.UNSUBSCRIBE, encode_uuid(sub_id))
            except PeerUnreachable as e:
                logger.warning(f"⚠️  [DHT] UNSUBSCRIBE at {contact.short()} failed: {e.reason}")
        handle.registrations = []

    # --- maintenance ----------------------------------------------------------

    def maintain(self) -> List[Contact]:
        """Resolve full buckets and probe stale contacts; returns revived peers"""
        for bucket in self.routing.buckets_with_replacements():
            swapped = self.routing.evict_if_dead(bucket, self.ping)
            if swapped:
                logger.info(f"🔄 [DHT] {self.name}: evicted {swapped[0].short()} for {swapped[1].short()}")
        # a successful ping revives the contact through _saw, which fires the
        # reachability listeners
        stale = [c for c in self.routing.contacts(include_stale=True) if c.stale]
        return [c for c in stale if self.ping(c)]

    def live_contacts(self) -> List[Contact]:
        return self.routing.contacts(include_stale=False)
