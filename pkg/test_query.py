#!/usr/bin/env python3
"""Standing query compilation, incremental joins and batch evaluation"""

import itertools
import os
import random
import sys
import uuid

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from gin.errors import DisconnectedQuery, QueryParseError, UnroutablePattern
from gin.query import (
    GraphQuery,
    QueryPattern,
    Var,
    compile_query,
    evaluate,
    match_query_pattern,
    parse_query_text,
    seed,
)
from gin.tuples import Tuple7, pattern_matches, tuple_id

A, B, C, D, E = (uuid.UUID(int=n) for n in range(1, 6))
PARENT = uuid.UUID(int=0x100)
SIBLING = uuid.UUID(int=0x101)
CTX = uuid.UUID(int=0x200)


def t(source, edge, target, ts=0):
    return Tuple7(source=source, edge=edge, target=target, context=CTX, timestamp=ts)


def v(name):
    return Var(name=name)


def grandparent():
    return GraphQuery(
        patterns=(
            QueryPattern(slots=(v("x"), PARENT, v("y"), None)),
            QueryPattern(slots=(v("y"), PARENT, v("z"), None)),
        )
    )


def feed(plan, t7):
    found = []
    for alpha in plan.alpha_nodes:
        if pattern_matches(alpha.pattern, t7):
            found.extend(plan.on_tuple(alpha, t7))
    return found


def nested_loop(q, tuples):
    """Independent oracle: every combination of tuples, one per pattern"""
    results = set()
    candidates = [[x for x in tuples if match_query_pattern(p, x, {}) is not None] for p in q.patterns]
    for combo in itertools.product(*candidates):
        binding = {}
        for pattern, x in zip(q.patterns, combo):
            binding = match_query_pattern(pattern, x, binding)
            if binding is None:
                break
        if binding is not None:
            results.add((tuple(sorted(binding.items())), tuple(sorted(tuple_id(x) for x in combo))))
    return results


def as_keys(bindings):
    return {(tuple(sorted(b.as_dict().items())), tuple(sorted(b.witnesses))) for b in bindings}


def test_grandparent_batch():
    print("\n" + "=" * 60)
    print("TEST: Grandparent query, batch evaluation")
    print("=" * 60)

    data = [t(A, PARENT, B), t(B, PARENT, C)]
    results = evaluate(grandparent(), data)
    assert [b.as_dict() for b in results] == [{"x": A, "y": B, "z": C}]

    results = evaluate(grandparent(), data + [t(D, PARENT, E)])
    assert len(results) == 1

    (only,) = results
    assert only.witnesses == (tuple_id(data[0]), tuple_id(data[1]))
    assert only.format() == f"?x={A}  ?y={B}  ?z={C}"

    print("✅ {x:A, y:B, z:C}, and (D,parent,E) joins nothing")
    return True


def test_grandparent_incremental():
    print("\n" + "=" * 60)
    print("TEST: Seed then right-activate")
    print("=" * 60)

    ab, bc = t(A, PARENT, B), t(B, PARENT, C)
    plan = compile_query(grandparent())
    assert len(plan.alpha_nodes) == 1, "both patterns erase to (*, parent, *, *)"

    seeded = seed(plan, lambda pattern: [ab])
    assert seeded == [] and plan.seeded

    fresh = feed(plan, bc)
    assert [b.as_dict() for b in fresh] == [{"x": A, "y": B, "z": C}]
    # a repeated delivery adds nothing
    assert feed(plan, bc) == [] and feed(plan, ab) == []
    assert plan.local_graph() == {ab, bc}

    print("✅ One binding, duplicates ignored, local graph holds both witnesses")
    return True


def test_plan_errors():
    print("\n" + "=" * 60)
    print("TEST: Disconnected and unroutable queries")
    print("=" * 60)

    disconnected = GraphQuery(
        patterns=(
            QueryPattern(slots=(v("x"), PARENT, v("y"), None)),
            QueryPattern(slots=(v("p"), SIBLING, v("q"), None)),
        )
    )
    try:
        compile_query(disconnected)
        raise AssertionError("disconnected query compiled")
    except DisconnectedQuery:
        pass

    open_ended = GraphQuery(patterns=(QueryPattern(slots=(v("a"), v("b"), v("c"), None)),))
    try:
        compile_query(open_ended)
        raise AssertionError("query without a fixed slot compiled")
    except UnroutablePattern:
        pass
    # batch evaluation does not route, so it accepts it
    assert len(evaluate(open_ended, [t(A, PARENT, B)])) == 1

    print("✅ DisconnectedQuery and UnroutablePattern raised at compile time")
    return True


def test_join_order_and_alpha_sharing():
    print("\n" + "=" * 60)
    print("TEST: Join order and shared alpha nodes")
    print("=" * 60)

    q = GraphQuery(
        patterns=(
            QueryPattern(slots=(v("x"), PARENT, v("y"), None)),
            QueryPattern(slots=(v("y"), SIBLING, v("s"), None)),
            QueryPattern(slots=(A, PARENT, v("x"), CTX)),
            QueryPattern(slots=(v("s"), PARENT, v("w"), None)),
        )
    )
    plan = compile_query(q)
    # most fixed slots first, then connected patterns
    assert plan.order[0] == 2
    assert sorted(plan.order) == [0, 1, 2, 3]
    assert len(plan.alpha_nodes) == 3
    assert sorted(len(node.levels) for node in plan.alpha_nodes) == [1, 1, 2]
    assert [step.shared for step in plan.beta_chain][0] == ("x",)

    print(f"✅ Order {plan.order}, {len(plan.alpha_nodes)} alpha node(s) for 4 patterns")
    return True


def test_projection():
    print("\n" + "=" * 60)
    print("TEST: Projected variables")
    print("=" * 60)

    data = [t(A, PARENT, B), t(B, PARENT, C), t(B, PARENT, D), t(E, PARENT, B)]
    full = evaluate(grandparent(), data)
    assert len(full) == 4

    projected = GraphQuery(patterns=grandparent().patterns, projected=("y",))
    only_y = evaluate(projected, data)
    assert [b.as_dict() for b in only_y] == [{"y": B}]

    plan = compile_query(projected)
    delivered = []
    for x in data:
        delivered.extend(feed(plan, x))
    assert len(delivered) == 1

    print("✅ Four full bindings collapse to one projected binding")
    return True


def random_query(rng, vertices):
    edges = [PARENT, SIBLING]
    names = ["a", "b"]
    patterns = [QueryPattern(slots=(v("a"), rng.choice(edges), v("b"), None))]
    for _ in range(rng.randint(1, 2)):
        anchor = v(rng.choice(names))
        if rng.random() < 0.3:
            other = rng.choice(vertices)
        elif rng.random() < 0.5 and len(names) > 1:
            other = v(rng.choice([n for n in names if n != anchor.name]))
        else:
            name = f"v{len(names)}"
            names.append(name)
            other = v(name)
        slots = (anchor, rng.choice(edges), other, None) if rng.random() < 0.5 else (other, rng.choice(edges), anchor, None)
        patterns.append(QueryPattern(slots=slots))
    return GraphQuery(patterns=tuple(patterns))


def test_incremental_equals_batch():
    """50 random queries, 10 arrival permutations each, against a nested-loop oracle"""
    print("\n" + "=" * 60)
    print("TEST: Incremental evaluation equals batch evaluation")
    print("=" * 60)

    rng = random.Random(7)
    vertices = [uuid.UUID(int=n) for n in range(1, 7)]
    nonempty = 0
    for _ in range(50):
        data = list({t(rng.choice(vertices), rng.choice([PARENT, SIBLING]), rng.choice(vertices)) for _ in range(30)})
        q = random_query(rng, vertices)
        oracle = nested_loop(q, data)
        assert as_keys(evaluate(q, data)) == oracle
        for _ in range(10):
            arrivals = data + rng.sample(data, 5)
            rng.shuffle(arrivals)
            plan = compile_query(q)
            delivered = []
            for x in arrivals:
                delivered.extend(feed(plan, x))
            assert as_keys(delivered) == oracle
            assert len(delivered) == len(oracle), "a binding was delivered twice"
            assert as_keys(plan.results()) == oracle
        nonempty += bool(oracle)

    print(f"✅ 50 queries x 10 permutations match ({nonempty} with results)")
    return True


def test_parse_query_text():
    print("\n" + "=" * 60)
    print("TEST: Query text")
    print("=" * 60)

    text = f"# grandparents\n?x {PARENT} ?y *\n\n?y {PARENT} ?z *\n"
    q = parse_query_text(text, ["?x", "z"])
    assert q.patterns == grandparent().patterns
    assert q.projected == ("x", "z")

    for bad, line in ((f"?x {PARENT} ?y", 1), (f"?x {PARENT} ?y *\n? {PARENT} ?y *", 2), ("", None)):
        try:
            parse_query_text(bad)
            raise AssertionError(f"accepted {bad!r}")
        except QueryParseError as e:
            assert e.line == line

    print("✅ Comments skipped, errors carry line numbers")
    return True


def run_all_tests():
    print("\n" + "=" * 60)
    print("GIN QUERY ENGINE TESTS")
    print("=" * 60)

    tests = [
        test_grandparent_batch,
        test_grandparent_incremental,
        test_plan_errors,
        test_join_order_and_alpha_sharing,
        test_projection,
        test_incremental_equals_batch,
        test_parse_query_text,
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
