"""
Kademlia routing state: XOR metric, contacts and k-buckets.

Bucket i holds contacts at XOR distance [2^i, 2^(i+1)) from the local id.
Buckets are kept least-recently-seen first. A full bucket never drops a
contact without a failed ping: either the caller supplies a ping function, or
the newcomer waits in the bucket's replacement cache until maintenance pings
the oldest entry.
"""

import hashlib
import random
import threading
from collections import OrderedDict
from typing import Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel

ID_BITS = 160
ID_BYTES = ID_BITS // 8


def xor_distance(a: int, b: int) -> int:
    return a ^ b


def key_for_bytes(data: bytes) -> int:
    """160-bit truncation of SHA-256"""
    return int.from_bytes(hashlib.sha256(data).digest()[:ID_BYTES], "big")


def random_node_id(rng: Optional[random.Random] = None) -> int:
    return (rng or random.SystemRandom()).getrandbits(ID_BITS)


def node_id_from_seed(seed_hex: str) -> int:
    return key_for_bytes(bytes.fromhex(seed_hex))


def id_to_bytes(node_id: int) -> bytes:
    return node_id.to_bytes(ID_BYTES, "big")


def id_from_bytes(data: bytes) -> int:
    return int.from_bytes(data, "big")


class Contact(BaseModel):
    node_id: int
    address: str
    last_seen: int = 0
    stale: bool = False

    def short(self) -> str:
        return f"{self.node_id:040x}"[:8]


class KBucket:
    def __init__(self, k: int):
        self.k = k
        self.contacts: "OrderedDict[int, Contact]" = OrderedDict()
        # newcomers seen while full, newest last
        self.replacements: "OrderedDict[int, Contact]" = OrderedDict()

    def __len__(self) -> int:
        return len(self.contacts)

    def oldest(self) -> Contact:
        return next(iter(self.contacts.values()))

    def touch(self, contact: Contact) -> None:
        self.contacts[contact.node_id] = contact
        self.contacts.move_to_end(contact.node_id)

    def remember(self, contact: Contact) -> None:
        self.replacements[contact.node_id] = contact
        self.replacements.move_to_end(contact.node_id)
        while len(self.replacements) > self.k:
            self.replacements.popitem(last=False)


class RoutingTable:
    """
    Buckets for one node id. Safe to share between threads: every read and
    write holds the table lock, reads return snapshots, and pings run with
    the lock released.
    """

    def __init__(self, own_id: int, k: int = 20, id_bits: int = ID_BITS):
        self.own_id = own_id
        self.k = k
        self.id_bits = id_bits
        self.buckets: List[KBucket] = [KBucket(k) for _ in range(id_bits)]
        self._lock = threading.RLock()

    def bucket_index(self, node_id: int) -> int:
        distance = xor_distance(self.own_id, node_id)
        if distance == 0:
            raise ValueError("own id has no bucket")
        return distance.bit_length() - 1

    def get(self, node_id: int) -> Optional[Contact]:
        if node_id == self.own_id:
            return None
        with self._lock:
            return self.buckets[self.bucket_index(node_id)].contacts.get(node_id)

    def add_contact(self, contact: Contact, ping: Optional[Callable[[Contact], bool]] = None) -> bool:
        """
        Record that `contact` was seen. Returns True if it is in the table
        afterwards. With a full bucket the oldest contact is pinged (when
        `ping` is given) and evicted only if the ping fails; without `ping`
        the newcomer goes to the replacement cache.
        """
        if contact.node_id == self.own_id:
            return False
        bucket = self.buckets[self.bucket_index(contact.node_id)]
        with self._lock:
            if contact.node_id in bucket.contacts or len(bucket) < self.k:
                bucket.touch(contact)
                return True
            if ping is None:
                bucket.remember(contact)
                return False
            oldest = bucket.oldest()
        alive = ping(oldest)
        with self._lock:
            if contact.node_id in bucket.contacts:
                bucket.touch(contact)
                return True
            if oldest.node_id not in bucket.contacts:
                # someone else already made room
                if len(bucket) < self.k:
                    bucket.touch(contact)
                    return True
                bucket.remember(contact)
                return False
            if alive:
                bucket.touch(bucket.contacts[oldest.node_id].model_copy(update={"stale": False}))
                bucket.remember(contact)
                return False
            del bucket.contacts[oldest.node_id]
            bucket.touch(contact)
            return True

    def evict_if_dead(self, bucket: KBucket, ping: Callable[[Contact], bool]) -> Optional[Tuple[Contact, Contact]]:
        """Maintenance step: ping the oldest entry of a bucket with waiting replacements"""
        with self._lock:
            if not bucket.replacements or not bucket.contacts:
                return None
            oldest = bucket.oldest()
        alive = ping(oldest)
        with self._lock:
            current = bucket.contacts.get(oldest.node_id)
            if current is None or not bucket.replacements:
                return None
            if alive:
                bucket.touch(current.model_copy(update={"stale": False}))
                return None
            del bucket.contacts[oldest.node_id]
            _, newcomer = bucket.replacements.popitem(last=True)
            bucket.touch(newcomer)
            return oldest, newcomer

    def buckets_with_replacements(self) -> List[KBucket]:
        with self._lock:
            return [bucket for bucket in self.buckets if bucket.replacements]

    def mark_stale(self, node_id: int) -> None:
        with self._lock:
            contact = self.get(node_id)
            if contact is not None and not contact.stale:
                bucket = self.buckets[self.bucket_index(node_id)]
                # keep LRU position; only the flag changes
                bucket.contacts[node_id] = contact.model_copy(update={"stale": True})

    def mark_live(self, node_id: int, seen_at: int = 0) -> bool:
        """Returns True if the contact was stale before"""
        with self._lock:
            contact = self.get(node_id)
            if contact is None:
                return False
            bucket = self.buckets[self.bucket_index(node_id)]
            bucket.touch(contact.model_copy(update={"stale": False, "last_seen": seen_at or contact.last_seen}))
            return contact.stale

    def contacts(self, include_stale: bool = True) -> List[Contact]:
        with self._lock:
            return [
                contact
                for bucket in self.buckets
                for contact in bucket.contacts.values()
                if include_stale or not contact.stale
            ]

    def find_closest(self, target: int, k: Optional[int] = None, include_stale: bool = False) -> List[Contact]:
        """Up to k known contacts nearest to target, ascending; never self"""
        k = self.k if k is None else k
        candidates = self.contacts(include_stale=include_stale)
        candidates.sort(key=lambda c: xor_distance(c.node_id, target))
        return candidates[:k]

    def __len__(self) -> int:
        with self._lock:
            return sum(len(bucket) for bucket in self.buckets)

    def bucket_sizes(self) -> Dict[int, int]:
        with self._lock:
            return {i: len(bucket) for i, bucket in enumerate(self.buckets) if len(bucket)}
