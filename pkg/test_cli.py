#!/usr/bin/env python3
"""Command line verbs on a local store file, keygen and the simulator"""

import contextlib
import io
import json
import os
import socket
import sys
import tempfile
import uuid

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from gin.cli import build_parser, main, parse_listen
from gin.signing import KeyRegistry, VerifyStatus, verify_tuple
from gin.tuples import parse_tuple_line

ROOT = os.path.dirname(os.path.abspath(__file__))
PARENT = uuid.UUID(int=0x100)
CTX = uuid.UUID(int=0x200)
A, B, C = (uuid.UUID(int=n) for n in (1, 2, 3))


def run(argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(argv)
    return code, out.getvalue()


def write(path, text):
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


def test_local_verbs():
    print("\n" + "=" * 60)
    print("TEST: add, get, map and digest with --local")
    print("=" * 60)

    with tempfile.TemporaryDirectory() as tmp:
        store = os.path.join(tmp, "tuples.log")
        tuples = write(os.path.join(tmp, "in.txt"), f"# family\n{A} {PARENT} {B} {CTX} 1\n{B} {PARENT} {C} {CTX} 2\n")

        code, out = run(["add", "--file", tuples, "--local", store])
        assert code == 0 and json.loads(out) == {"new": 2, "received": 2, "rejected": 0}
        code, out = run(["add", "--file", tuples, "--local", store])
        assert json.loads(out)["new"] == 0

        code, out = run(["get", f"{A} * * *", "--local", store])
        assert code == 0 and out.splitlines() == [f"{A} {PARENT} {B} {CTX} 1"]

        query = write(os.path.join(tmp, "q.txt"), f"?x {PARENT} ?y *\n?y {PARENT} ?z *\n")
        code, out = run(["map", query, "--local", store])
        assert code == 0 and out.splitlines() == [f"?x={A}  ?y={B}  ?z={C}"]
        code, out = run(["map", query, "--project", "z", "--local", store])
        assert out.splitlines() == [f"?z={C}"]

        code, out = run(["digest", "--local", store])
        count, root = out.split()
        assert code == 0 and count == "2" and len(root) == 64

    print("✅ Local verbs agree with each other")
    return True


def test_keygen_and_signed_add():
    print("\n" + "=" * 60)
    print("TEST: keygen, then add --sign")
    print("=" * 60)

    with tempfile.TemporaryDirectory() as tmp:
        code, out = run(["keygen", "--scheme", "ed25519", "--signer", str(uuid.UUID(int=0x51))])
        assert code == 0
        lines = [line for line in out.splitlines() if not line.startswith("#")]
        assert len(lines) == 2
        key_file = write(os.path.join(tmp, "signing.key"), lines[0] + "\n")
        registry_file = write(os.path.join(tmp, "keys.txt"), lines[1] + "\n")

        store = os.path.join(tmp, "tuples.log")
        tuples = write(os.path.join(tmp, "in.txt"), f"{A} {PARENT} {B} {CTX} 7\n")
        code, out = run(["add", "--file", tuples, "--sign", key_file, "--keys", registry_file, "--local", store])
        assert code == 0 and json.loads(out)["new"] == 1

        code, out = run(["get", f"* {PARENT} * *", "--local", store])
        (stored,) = [parse_tuple_line(line) for line in out.splitlines()]
        assert stored.signer == uuid.UUID(int=0x51)
        assert verify_tuple(stored, KeyRegistry.load(registry_file)) == VerifyStatus.VALID

    print("✅ The generated key signs, the registry line verifies")
    return True


def test_sim_verb():
    print("\n" + "=" * 60)
    print("TEST: sim with trace and report files")
    print("=" * 60)

    with tempfile.TemporaryDirectory() as tmp:
        trace = os.path.join(tmp, "trace.jsonl")
        report = os.path.join(tmp, "report.json")
        script = os.path.join(ROOT, "scenarios", "flood_basic.gin-scenario")
        code, out = run(["sim", script, "--trace", trace, "--report", report])
        assert code == 0
        assert json.loads(out)["passed"] is True
        with open(report, encoding="utf-8") as f:
            assert json.load(f) == json.loads(out)
        with open(trace, encoding="utf-8") as f:
            assert all(json.loads(line)["event"] for line in f)

    print("✅ Report printed and written, trace is JSON lines")
    return True


def test_usage_errors():
    print("\n" + "=" * 60)
    print("TEST: Usage errors exit 1")
    print("=" * 60)

    for argv in (["frobnicate"], ["get"], ["keygen", "--scheme", "rot13"]):
        err = io.StringIO()
        try:
            with contextlib.redirect_stderr(err):
                main(argv)
            raise AssertionError(f"accepted {argv}")
        except SystemExit as e:
            assert e.code == 1, f"{argv}: exit {e.code}"

    with tempfile.TemporaryDirectory() as tmp:
        store = os.path.join(tmp, "tuples.log")
        assert run(["get", "* *", "--local", store])[0] == 1
        bad = write(os.path.join(tmp, "bad.txt"), "not a tuple\n")
        assert run(["add", "--file", bad, "--local", store])[0] == 1
        assert run(["map", os.path.join(tmp, "missing.txt"), "--local", store])[0] == 1

    print("✅ Bad verbs, bad patterns and bad files all exit 1")
    return True

def test_node_listen_address():
    print("\n" + "=" * 60)
    print("TEST: node --listen host:port")
    print("=" * 60)

    assert parse_listen("0.0.0.0:9001") == ("0.0.0.0", 9001)
    assert parse_listen("[::1]:8001") == ("::1", 8001)
    args = build_parser().parse_args(["node", "--listen", "0.0.0.0:9001"])
    assert args.listen == ("0.0.0.0", 9001)
    assert build_parser().parse_args(["node"]).listen is None

    for text in ("9001", "host:", ":9001", "host:port", "host:70000"):
        err = io.StringIO()
        try:
            with contextlib.redirect_stderr(err):
                main(["node", "--listen", text])
            raise AssertionError(f"accepted --listen {text}")
        except SystemExit as e:
            assert e.code == 1, f"{text}: exit {e.code}"

    # the listen address is the one checked before the daemon starts
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as taken:
        taken.bind(("127.0.0.1", 0))
        taken.listen(1)
        port = taken.getsockname()[1]
        with tempfile.TemporaryDirectory() as tmp:
            assert main(["node", "--listen", f"127.0.0.1:{port}", "--port", "1", "--data-dir", tmp]) == 2

    print("✅ --listen parsed, malformed values exit 1, a taken port exits 2")
    return True



def run_all_tests():
    print("\n" + "=" * 60)
    print("GIN COMMAND LINE TESTS")
    print("=" * 60)

    tests = [
        test_local_verbs,
        test_keygen_and_signed_add,
        test_sim_verb,
        test_usage_errors,
        test_node_listen_address,
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
