#!/usr/bin/env python3
"""Anti-entropy: digest exchange, partition merge, reachability fast path"""

import math
import os
import random
import sys
import uuid

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from gin.query import GraphQuery, QueryPattern, Var, evaluate
from gin.simulator import Simulation
from gin.tuples import Tuple7, tuple_id
from gin.wire import decode_frame, encode_frame, ok

EDGE = uuid.UUID(int=0xE1)
SIDE_A = uuid.UUID(int=0xA0)
SIDE_B = uuid.UUID(int=0xB0)


def side_tuples(seed, context, count):
    rng = random.Random(seed)
    return [
        Tuple7(
            source=uuid.UUID(int=rng.getrandbits(64)),
            edge=EDGE,
            target=uuid.UUID(int=rng.getrandbits(64)),
            context=context,
            timestamp=n,
        )
        for n in range(count)
    ]


def test_two_store_exchange():
    print("\n" + "=" * 60)
    print("TEST: {t1,t2} vs {t2,t3}")
    print("=" * 60)

    sim = Simulation(2, seed=1)
    t1, t2, t3 = side_tuples(1, SIDE_A, 3)
    left, right = sim.nodes
    left.store.insert_many([t1, t2])
    right.store.insert_many([t2, t3])

    report = sim.gossip[0].gossip_round([right.contact])
    assert report.pulled == 1 and report.pushed == 1
    assert left.store.digest() == right.store.digest()
    assert len(left.store) == 3

    again = sim.gossip[1].gossip_round([left.contact])
    assert again.transferred == 0, "identical stores exchanged tuples"

    print("✅ One pull, one push, then nothing to transfer")
    return True


def test_partition_merge_converges():
    """20 nodes split 10/10, 100 tuples per side, healed: equal digests within 20 rounds"""
    print("\n" + "=" * 60)
    print("TEST: Partition merge convergence")
    print("=" * 60)

    sim = Simulation(20, seed=2)
    sim.partition([range(0, 10), range(10, 20)])
    side_a = side_tuples(2, SIDE_A, 100)
    side_b = side_tuples(3, SIDE_B, 100)

    # a standing query on side A for side B's context, registered during the split
    q = GraphQuery(patterns=(QueryPattern(slots=(Var(name="s"), EDGE, Var(name="t"), SIDE_B)),))
    handle = sim.clients[3].map(q, lambda binding: None)

    sim.clients[0].add(side_a)
    sim.clients[10].add(side_b)
    sim.run(3)
    assert not sim.converged()
    assert handle.delivered == []

    sim.heal()
    taken = sim.run_until_converged(20)
    assert taken is not None, "digests still differ after 20 rounds"

    everything = {tuple_id(t) for t in side_a + side_b}
    for node in sim.nodes:
        assert {tuple_id(t) for t in node.store.dump()} == everything

    # let the last notifications land, still inside the 20-round bound
    sim.run(max(0, 20 - taken))
    assert set(handle.results()) == evaluate(q, side_a + side_b)
    assert len(handle.delivered) == 100

    before = sim.transferred()
    sim.heal()
    sim.tick()
    assert sim.transferred() == before, "a repeated heal moved tuples"

    print(f"✅ Converged {taken} round(s) after the heal; the split-time map saw all 100 side-B tuples")
    return True


def test_reachability_fast_path():
    print("\n" + "=" * 60)
    print("TEST: Reachability change schedules an early round")
    print("=" * 60)

    sim = Simulation(3, seed=3)
    sim.partition([[0, 1], [2]])
    lone = side_tuples(4, SIDE_B, 5)
    sim.nodes[2].store.insert_many(lone)
    sim.tick()

    sim.heal()
    assert sim.gossip[0].has_pending and sim.gossip[2].has_pending
    assert sim.gossip[0].wakeup.is_set()
    report = sim.gossip[0].run_pending()
    assert report is not None and report.pulled >= len(lone)
    assert sim.gossip[0].run_pending() is None

    for t in lone:
        assert sim.nodes[0].store.contains(tuple_id(t))

    print("✅ Heal queued revived peers and the fast path merged them")
    return True

def test_bad_reply_skips_peer():
    """A peer answering DIGEST with an undecodable body is skipped, the round goes on"""
    print("\n" + "=" * 60)
    print("TEST: Undecodable reply from one peer")
    print("=" * 60)

    sim = Simulation(3, seed=4)
    node, good, bad = sim.nodes
    good.store.insert_many(side_tuples(5, SIDE_A, 4))
    node._saw(bad.contact)

    def broken(frame):
        request = decode_frame(frame)
        # four-byte count of five ids and no id bytes after it
        return encode_frame(request.reply(bad.contact, ok(b"\x00\x00\x00\x05")))

    sim.network.register(bad.address, broken)

    report = sim.gossip[0].gossip_round([bad.contact, good.contact])
    assert report.unreachable == [bad.contact.short()]
    assert report.peers == [good.contact.short()]
    assert report.pulled == 4
    assert node.store.digest() == good.store.digest()
    assert node.routing.get(bad.node_id).stale

    print("✅ Bad peer marked stale, good peer still merged")
    return True


def test_convergence_bound_random_networks():
    """Random networks up to 30 nodes converge within 2*ceil(log2 N)+10 rounds"""
    print("\n" + "=" * 60)
    print("TEST: Convergence bound over random networks")
    print("=" * 60)

    for size in (5, 12, 20, 30):
        bound = 2 * math.ceil(math.log2(size)) + 10
        for seed in range(3):
            sim = Simulation(size, seed=100 * size + seed)
            rng = random.Random(seed)
            for t in side_tuples(size * 10 + seed, SIDE_A, 3 * size):
                sim.nodes[rng.randrange(size)].store.insert(t)
            assert not sim.converged()
            taken = sim.run_until_converged(bound)
            assert taken is not None, f"N={size} seed={seed}: not converged in {bound} rounds"
            assert len(sim.nodes[0].store) == 3 * size
            print(f"   N={size} seed={seed}: {taken} round(s), bound {bound}")

    print("✅ Every network converged inside the bound")
    return True



def run_all_tests():
    print("\n" + "=" * 60)
    print("GIN ANTI-ENTROPY TESTS")
    print("=" * 60)

    tests = [
        test_two_store_exchange,
        test_partition_merge_converges,
        test_reachability_fast_path,
        test_bad_reply_skips_peer,
        test_convergence_bound_random_networks,
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
