#!/usr/bin/env python3
"""Signing, verification and the key registry"""

import os
import random
import sys
import tempfile
import uuid

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from gin.errors import MalformedTuple, MissingSigner
from gin.signing import (
    SCHEMES,
    KeyRegistry,
    VerifyStatus,
    get_scheme,
    key_tuples,
    load_signing_key,
    read_key_from_graph,
    sign_tuple,
    verify_tuple,
)
from gin.store import TupleStore
from gin.tuples import UNSIGNED_LEN, Tuple7, canonical_serialize, parse_tuple, tuple_id


def draft(rng, signer):
    return Tuple7(
        source=uuid.UUID(int=rng.getrandbits(128)),
        edge=uuid.UUID(int=rng.getrandbits(128)),
        target=uuid.UUID(int=rng.getrandbits(128)),
        context=uuid.UUID(int=rng.getrandbits(128)),
        timestamp=rng.randint(-(2**40), 2**40),
        signer=signer,
    )


def test_sign_verify_round_trips():
    print("\n" + "=" * 60)
    print("TEST: 1000 sign/verify round trips")
    print("=" * 60)

    rng = random.Random(10)
    registry = KeyRegistry()
    hmac_signer = uuid.UUID(int=0xA)
    ed_signer = uuid.UUID(int=0xB)
    secret = bytes(range(32))
    registry.register(hmac_signer, secret, get_scheme("hmac-sha256"))
    ed = get_scheme("ed25519")
    private, public = ed.generate()
    registry.register(ed_signer, public, ed)

    for i in range(1000):
        if i % 10 == 0:
            t = sign_tuple(draft(rng, ed_signer), private, ed)
        else:
            t = sign_tuple(draft(rng, hmac_signer), secret)
        assert verify_tuple(t, registry) == VerifyStatus.VALID
        assert tuple_id(t) == tuple_id(t.model_copy(update={"signature": None}))

    print("✅ Every signed tuple verifies and keeps its id")
    return True


def test_verify_statuses():
    print("\n" + "=" * 60)
    print("TEST: Verification statuses")
    print("=" * 60)

    rng = random.Random(11)
    registry = KeyRegistry()
    signer = uuid.UUID(int=0xA)
    registry.register(signer, b"k" * 32)

    unsigned = draft(rng, None)
    assert verify_tuple(unsigned, registry) == VerifyStatus.UNSIGNED

    stranger = sign_tuple(draft(rng, uuid.UUID(int=0xBAD)), b"k" * 32)
    assert verify_tuple(stranger, registry) == VerifyStatus.UNKNOWN_SIGNER

    forged = sign_tuple(draft(rng, signer), b"wrong key")
    assert verify_tuple(forged, registry) == VerifyStatus.INVALID

    try:
        sign_tuple(unsigned, b"k" * 32)
        raise AssertionError("signing without a signer succeeded")
    except MissingSigner:
        pass

    print("✅ Unsigned, UnknownSigner, Invalid and MissingSigner behave")
    return True


def test_single_byte_perturbation():
    """Flipping any byte of a signed serialization never yields Valid"""
    print("\n" + "=" * 60)
    print("TEST: Single-byte perturbations of 100 signed tuples")
    print("=" * 60)

    rng = random.Random(12)
    signer = uuid.UUID(int=0xC0FFEE)
    secret = b"s" * 32
    registry = KeyRegistry()
    registry.register(signer, secret)
    signer_bytes = range(UNSIGNED_LEN, UNSIGNED_LEN + 16)

    checked = 0
    for _ in range(100):
        data = canonical_serialize(sign_tuple(draft(rng, signer), secret), include_signature=True)
        for position in range(len(data)):
            mutated = bytearray(data)
            mutated[position] ^= 0x01
            try:
                t, _ = parse_tuple(bytes(mutated))
            except MalformedTuple:
                continue
            status = verify_tuple(t, registry)
            assert status != VerifyStatus.VALID, f"byte {position} flipped and still valid"
            # outside the flag and signer bytes the signature must fail to check
            if position < UNSIGNED_LEN - 1 or position >= UNSIGNED_LEN + 16:
                assert status == VerifyStatus.INVALID, f"byte {position}: {status}"
            elif position in signer_bytes:
                assert status == VerifyStatus.UNKNOWN_SIGNER
            checked += 1

    print(f"✅ {checked} perturbed tuples parsed, none verified")
    return True


def test_key_registry_files():
    print("\n" + "=" * 60)
    print("TEST: Key registry and signing key files")
    print("=" * 60)

    signer = uuid.UUID("11111111-2222-4333-8444-555555555555")
    scheme = get_scheme("ed25519")
    private, public = scheme.generate()
    with tempfile.TemporaryDirectory() as tmp:
        keys = os.path.join(tmp, "keys.txt")
        with open(keys, "w") as f:
            f.write(f"# registry\n{signer} ed25519 {public.hex()}\n")
        secret = os.path.join(tmp, "signing.key")
        with open(secret, "w") as f:
            f.write(f"{signer} ed25519 {private.hex()}\n")

        registry = KeyRegistry.load(keys)
        loaded_signer, loaded_scheme, loaded_private = load_signing_key(secret)

    assert signer in registry and len(registry) == 1
    assert loaded_signer == signer and loaded_scheme is SCHEMES["ed25519"]
    t = sign_tuple(draft(random.Random(13), signer), loaded_private, loaded_scheme)
    assert verify_tuple(t, registry) == VerifyStatus.VALID

    try:
        get_scheme("rot13")
        raise AssertionError("unknown scheme accepted")
    except ValueError:
        pass

    print("✅ Keys load from files and verify")
    return True


def test_keys_in_graph():
    print("\n" + "=" * 60)
    print("TEST: Keys published as tuples")
    print("=" * 60)

    store = TupleStore()
    registry = KeyRegistry()
    hmac_signer = uuid.UUID(int=0x51)
    ed_signer = uuid.UUID(int=0x52)
    ed = get_scheme("ed25519")
    private, public = ed.generate()
    registry.register(hmac_signer, b"h" * 20)
    registry.register(ed_signer, public, ed)

    store.insert_many(registry.to_tuples(timestamp=1))
    rebuilt = KeyRegistry.from_graph([hmac_signer, ed_signer, uuid.UUID(int=0x53)], store.scan)
    assert len(rebuilt) == 2
    assert rebuilt.lookup(hmac_signer)[1] == b"h" * 20
    assert rebuilt.lookup(ed_signer)[1] == public

    t = sign_tuple(draft(random.Random(14), ed_signer), private, ed)
    assert verify_tuple(t, rebuilt) == VerifyStatus.VALID

    odd = bytes(range(33))
    store.insert_many(key_tuples(uuid.UUID(int=0x54), "hmac-sha256", odd, timestamp=2))
    assert read_key_from_graph(uuid.UUID(int=0x54), store.scan) == ("hmac-sha256", odd)

    print("✅ Registry survives a trip through the graph, odd key lengths included")
    return True


def run_all_tests():
    print("\n" + "=" * 60)
    print("GIN SIGNING TESTS")
    print("=" * 60)

    tests = [
        test_sign_verify_round_trips,
        test_verify_statuses,
        test_single_byte_perturbation,
        test_key_registry_files,
        test_keys_in_graph,
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
