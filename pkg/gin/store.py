"""
Per-node add-only tuple store.

Keeps the append-only log, one inverted index per slot position, the alpha
subscription registry and the digest used by anti-entropy. Tuples are never
removed or modified. The log can be persisted to a flat file of canonical
serializations (signatures included) and replayed at startup.
"""

import hashlib
import logging
import os
import threading
import uuid
from collections import defaultdict
from typing import Any, Callable, Dict, Iterable, List, Optional, Set, Tuple

from pydantic import BaseModel, ConfigDict

from gin.errors import MalformedTuple
from gin.tuples import (
    CONTEXT,
    EDGE,
    SOURCE,
    TARGET,
    Tuple7,
    TuplePattern,
    canonical_serialize,
    parse_tuple,
    pattern_matches,
    tuple_id,
)

logger = logging.getLogger(__name__)

# index tie-break order when two fixed slots have equally long posting lists
SLOT_PREFERENCE = (SOURCE, TARGET, CONTEXT, EDGE)


class AlphaSubscription(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sub_id: uuid.UUID
    pattern: TuplePattern
    endpoint: Any
    created_at: int


class Digest(BaseModel):
    """Exact summary of a store's tuple-id set"""

    model_config = ConfigDict(frozen=True)

    count: int
    ids: Tuple[bytes, ...]

    @classmethod
    def of(cls, ids: Iterable[bytes]) -> "Digest":
        ordered = tuple(sorted(set(ids)))
        return cls(count=len(ordered), ids=ordered)

    @property
    def root(self) -> str:
        """Hash over the sorted id list, for printing and quick comparison"""
        return hashlib.sha256(b"".join(self.ids)).hexdigest()


def diff(local: Digest, remote: Digest) -> Tuple[Set[bytes], Set[bytes]]:
    """(missing locally, missing remotely)"""
    mine = set(local.ids)
    theirs = set(remote.ids)
    return theirs - mine, mine - theirs


Notifier = Callable[[AlphaSubscription, Tuple7], None]


def call_endpoint(sub: AlphaSubscription, t: Tuple7) -> None:
    """Default notifier: local subscribers pass a callable as endpoint"""
    if callable(sub.endpoint):
        sub.endpoint(t)


class TupleStore:
    """
    Add-only store with field indexes and insert-time alpha notification.

    Inserts are serialized by a write lock; registering a subscription takes
    the same lock so its initial scan and its live notifications never miss
    or double a tuple.
    """

    def __init__(
        self,
        path: Optional[str] = None,
        notifier: Notifier = call_endpoint,
        clock: Optional[Callable[[], int]] = None,
        id_factory: Callable[[], uuid.UUID] = uuid.uuid4,
    ):
        self.path = path
        self.notifier = notifier
        self.clock = clock or (lambda: 0)
        self.id_factory = id_factory
        self._log: List[Tuple7] = []
        self._offsets: Dict[bytes, int] = {}
        self._index: List[Dict[uuid.UUID, List[int]]] = [defaultdict(list) for _ in range(4)]
        self._subs: Dict[uuid.UUID, AlphaSubscription] = {}
        self._lock = threading.RLock()
        self._file = None
        if path:
            self._replay(path)
            self._file = open(path, "ab")

    # --- persistence ---------------------------------------------------------

    def _replay(self, path: str) -> None:
        if not os.path.exists(path):
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            return
        with open(path, "rb") as f:
            data = f.read()
        offset = 0
        while offset < len(data):
            try:
                t, end = parse_tuple(data, offset)
            except MalformedTuple as e:
                # a write cut short by a crash; keep every complete record before it
                logger.warning(
                    f"⚠️  [STORE] {path}: dropping {len(data) - offset} byte(s) of incomplete record at offset {offset}: {e}"
                )
                os.truncate(path, offset)
                break
            self._append(t, tuple_id(t))
            offset = end
        logger.info(f"✅ [STORE] Replayed {len(self._log)} tuple(s) from {path}")

    def close(self) -> None:
        with self._lock:
            if self._file is not None:
                self._file.close()
                self._file = None

    # --- writes ---------------------------------------------------------------

    def _append(self, t: Tuple7, tid: bytes) -> None:
        offset = len(self._log)
        self._log.append(t)
        self._offsets[tid] = offset
        for position, value in enumerate(t.slots):
            self._index[position][value].append(offset)

    def insert(self, t: Tuple7) -> bool:
        """True iff t was not stored before"""
        if not isinstance(t, Tuple7) or not t.is_publishable():
            raise MalformedTuple("signer and signature must be both present or both absent")
        tid = tuple_id(t)
        with self._lock:
            if tid in self._offsets:
                return False
            self._append(t, tid)
            if self._file is not None:
                self._file.write(canonical_serialize(t, include_signature=True))
                self._file.flush()
            for sub in list(self._subs.values()):
                if pattern_matches(sub.pattern, t):
                    try:
                        self.notifier(sub, t)
                    except Exception as e:
                        logger.error(f"❌ [STORE] Notification for {sub.sub_id} failed: {e}")
            return True

    def insert_many(self, tuples: Iterable[Tuple7]) -> int:
        return sum(1 for t in tuples if self.insert(t))

    # --- reads ----------------------------------------------------------------

    def _posting(self, p: TuplePattern) -> Optional[List[int]]:
        best = None
        for position in SLOT_PREFERENCE:
            value = p.slots[position]
            if value is None:
                continue
            posting = self._index[position].get(value, [])
            if best is None or len(posting) < len(best):
                best = posting
        return best

    def scan(self, p: TuplePattern) -> List[Tuple7]:
        """Stored tuples matching p, in log order"""
        with self._lock:
            posting = self._posting(p)
            if posting is None:
                return list(self._log)
            return [self._log[offset] for offset in posting if pattern_matches(p, self._log[offset])]

    def get_many(self, ids: Iterable[bytes]) -> List[Tuple7]:
        with self._lock:
            return [self._log[self._offsets[tid]] for tid in ids if tid in self._offsets]

    def contains(self, tid: bytes) -> bool:
        return tid in self._offsets

    def dump(self) -> List[Tuple7]:
        with self._lock:
            return list(self._log)

    def __len__(self) -> int:
        return len(self._log)

    # --- alpha subscriptions --------------------------------------------------

    def register_alpha(self, p: TuplePattern, endpoint: Any) -> Tuple[uuid.UUID, List[Tuple7]]:
        """Returns (sub_id, initial scan); both taken under the write lock"""
        with self._lock:
            sub = AlphaSubscription(sub_id=self.id_factory(), pattern=p, endpoint=endpoint, created_at=self.clock())
            self._subs[sub.sub_id] = sub
            return sub.sub_id, self.scan(p)

    def unregister_alpha(self, sub_id: uuid.UUID) -> bool:
        with self._lock:
            return self._subs.pop(sub_id, None) is not None

    def subscription_count(self) -> int:
        return len(self._subs)

    def subscriptions(self) -> List[AlphaSubscription]:
        with self._lock:
            return list(self._subs.values())

    # --- anti-entropy ---------------------------------------------------------

    def digest(self) -> Digest:
        with self._lock:
            return Digest.of(self._offsets.keys())
