#!/usr/bin/env python3
"""XOR metric and k-bucket routing table"""

import os
import random
import sys
import threading

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from gin.routing import Contact, RoutingTable, key_for_bytes, node_id_from_seed, xor_distance


def test_xor_metric_properties():
    """Exhaustive over 8-bit ids"""
    print("\n" + "=" * 60)
    print("TEST: XOR metric on 8-bit ids")
    print("=" * 60)

    ids = range(256)
    for a in ids:
        assert xor_distance(a, a) == 0
        for b in ids:
            assert xor_distance(a, b) == xor_distance(b, a)
    for a in ids:
        seen = set()
        for b in ids:
            d = xor_distance(a, b)
            # unidirectional: each distance from a names exactly one id
            assert d not in seen
            seen.add(d)
    rng = random.Random(1)
    for _ in range(5000):
        a, b, c = rng.randrange(256), rng.randrange(256), rng.randrange(256)
        assert xor_distance(a, c) <= xor_distance(a, b) + xor_distance(b, c)

    print("✅ Identity, symmetry, unidirectionality, triangle inequality")
    return True


def test_bucket_capacity_and_placement():
    print("\n" + "=" * 60)
    print("TEST: Buckets never exceed k")
    print("=" * 60)

    rng = random.Random(2)
    own = 0b1010_1010
    table = RoutingTable(own, k=4, id_bits=8)
    for _ in range(10_000):
        node_id = rng.randrange(256)
        if node_id == own:
            continue
        # half the updates come with a failing ping, half without one
        ping = (lambda c: False) if rng.random() < 0.5 else None
        table.add_contact(Contact(node_id=node_id, address=f"n{node_id}"), ping=ping)
        for index, bucket in enumerate(table.buckets):
            assert len(bucket) <= 4
            for contact in bucket.contacts.values():
                assert (own ^ contact.node_id).bit_length() - 1 == index
    sizes = table.bucket_sizes()
    assert sum(sizes.values()) == len(table) and max(sizes.values()) <= 4
    assert table.get(own) is None
    assert not table.add_contact(Contact(node_id=own, address="self"))

    print(f"✅ 10,000 updates, {len(table)} contact(s) held, every bucket <= k")
    return True


def test_full_bucket_keeps_live_contacts():
    print("\n" + "=" * 60)
    print("TEST: Full bucket eviction rules")
    print("=" * 60)

    own = 0
    table = RoutingTable(own, k=2, id_bits=8)
    # ids 128..255 all land in the top bucket
    for node_id in (128, 129):
        table.add_contact(Contact(node_id=node_id, address=f"n{node_id}"))

    # oldest answers: the newcomer waits as a replacement
    assert not table.add_contact(Contact(node_id=130, address="n130"), ping=lambda c: True)
    assert table.get(130) is None
    assert 130 in table.buckets[7].replacements

    # maintenance with a dead oldest swaps in the replacement
    swapped = table.evict_if_dead(table.buckets[7], lambda c: False)
    assert swapped is not None and swapped[1].node_id == 130
    assert table.get(130) is not None

    # oldest fails the ping: newcomer replaces it at once
    oldest = table.buckets[7].oldest().node_id
    assert table.add_contact(Contact(node_id=131, address="n131"), ping=lambda c: False)
    assert table.get(oldest) is None

    print("✅ Live contacts are never dropped; dead ones give way")
    return True


def test_stale_marking_and_closest():
    print("\n" + "=" * 60)
    print("TEST: Stale contacts and closest-first ordering")
    print("=" * 60)

    rng = random.Random(3)
    own = key_for_bytes(b"self")
    table = RoutingTable(own, k=20)
    ids = [rng.getrandbits(160) for _ in range(200)]
    for node_id in ids:
        table.add_contact(Contact(node_id=node_id, address=f"{node_id:x}"[:8]))
    held = [c.node_id for c in table.contacts()]

    target = rng.getrandbits(160)
    closest = table.find_closest(target, 10)
    assert [c.node_id for c in closest] == sorted(held, key=lambda n: n ^ target)[:10]

    table.mark_stale(closest[0].node_id)
    assert closest[0].node_id not in [c.node_id for c in table.find_closest(target, 10)]
    assert closest[0].node_id in [c.node_id for c in table.find_closest(target, 10, include_stale=True)]
    assert table.mark_live(closest[0].node_id, seen_at=5) is True
    assert table.mark_live(closest[0].node_id) is False

    assert node_id_from_seed("00ff") == node_id_from_seed("00ff")
    assert node_id_from_seed("00ff") != node_id_from_seed("00fe")

    print("✅ Stale contacts skipped by lookups until marked live")
    return True


def test_concurrent_updates_and_lookups():
    """Contacts recorded on one thread while others look up closest nodes"""
    print("\n" + "=" * 60)
    print("TEST: Routing table shared between threads")
    print("=" * 60)

    own = key_for_bytes(b"shared")
    table = RoutingTable(own, k=4)
    errors = []
    done = threading.Event()

    def writer(seed):
        rng = random.Random(seed)
        try:
            for _ in range(3000):
                node_id = rng.getrandbits(12) << 148 | rng.getrandbits(16)
                if node_id == own:
                    continue
                contact = Contact(node_id=node_id, address=f"w{seed}-{node_id:x}"[:16])
                ping = (lambda c: rng.random() < 0.5) if rng.random() < 0.2 else None
                table.add_contact(contact, ping=ping)
                if rng.random() < 0.1:
                    table.mark_stale(node_id)
                elif rng.random() < 0.1:
                    table.mark_live(node_id, seen_at=1)
                if rng.random() < 0.05:
                    for bucket in table.buckets_with_replacements():
                        table.evict_if_dead(bucket, lambda c: rng.random() < 0.5)
        except Exception as e:
            errors.append(e)

    def reader(seed):
        rng = random.Random(seed)
        try:
            while not done.is_set():
                table.find_closest(rng.getrandbits(160), 8, include_stale=rng.random() < 0.5)
                table.contacts()
                len(table)
                table.bucket_sizes()
        except Exception as e:
            errors.append(e)

    writers = [threading.Thread(target=writer, args=(n,)) for n in range(3)]
    readers = [threading.Thread(target=reader, args=(n + 10,)) for n in range(3)]
    for thread in readers + writers:
        thread.start()
    for thread in writers:
        thread.join()
    done.set()
    for thread in readers:
        thread.join()

    assert errors == [], f"errors: {errors[:3]}"
    assert all(size <= 4 for size in table.bucket_sizes().values())
    ids = [c.node_id for c in table.contacts()]
    assert len(ids) == len(set(ids)) == len(table)

    print(f"✅ 3 writers, 3 readers, no errors; {len(table)} contact(s) held, every bucket <= k")
    return True


def run_all_tests():
    print("\n" + "=" * 60)
    print("GIN ROUTING TABLE TESTS")
    print("=" * 60)

    tests = [
        test_xor_metric_properties,
        test_bucket_capacity_and_placement,
        test_full_bucket_keeps_live_contacts,
        test_stale_marking_and_closest,
        test_concurrent_updates_and_lookups,
    ]

    passed = 0
    failed = 0

    for test in tests:
        try:
            if test():
                passed += 1
        except Exception as e:
            print(f"\n❌ Test failed: {e}")
            import traceback

            traceback.print_exc()
            failed += 1

    print("\n" + "=" * 60)
    print("TEST SUMMARY")
    print("=" * 60)
    print(f"✅ Passed: {passed}")
    print(f"❌ Failed: {failed}")
    print(f"📊 Total: {passed + failed}")

    return 0 if failed == 0 else 1


if __name__ == "__main__":
    sys.exit(run_all_tests())
