"""
Command line: gin node | add | get | map | digest | sim | keygen

Verbs talk to a running daemon over HTTP (--node host:port, default
127.0.0.1:$PORT) or work directly on a store file with --local <path>.
Exit codes: 0 ok, 1 usage or failed run, 2 bind failure, 3 bootstrap
timeout, 4 network error.
"""

import argparse
import json
import logging
import os
import socket
import sys
from typing import List, Optional, Tuple

import requests
from pydantic import ValidationError

from gin.config import Settings, configure_logging
from gin.errors import BindFailure, GinError, NetworkDown
from gin.query import evaluate, parse_query_text
from gin.scenario import load_script, run_simulation
from gin.signing import SCHEMES, KeyRegistry, VerifyStatus, get_scheme, load_signing_key, sign_tuple, verify_tuple
from gin.store import TupleStore
from gin.tuples import format_tuple_line, parse_pattern, read_tuple_file, read_tuple_lines

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_listen(text: str) -> Tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host.strip("[]"), int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(prog="gin", description="Global Information Network node and tools")
    parser.add_argument("--log-level", default=None, help="overrides GIN_LOG_LEVEL")
    verbs = parser.add_subparsers(dest="verb", required=True, parser_class=ArgumentParser)

    node = verbs.add_parser("node", help="run a node daemon")
    node.add_argument("--host", default="127.0.0.1")
    node.add_argument("--port", type=int, default=None)
    node.add_argument("--listen", type=parse_listen, default=None, help="host:port, overrides --host and --port")
    node.add_argument("--advertise", default=None, help="address other nodes use to reach this one")
    node.add_argument("--bootstrap", default=os.getenv("GIN_BOOTSTRAP", ""), help="comma separated host:port list")
    node.add_argument("--id-seed", default=None, help="hex seed for a reproducible node id")
    node.add_argument("--k", type=int, default=None)
    node.add_argument("--alpha", type=int, default=None)
    node.add_argument("--replication", type=int, default=None)
    node.add_argument("--data-dir", default=None)
    node.add_argument("--log", default=None, help="JSON-lines event log path")
    node.add_argument("--keys", default=None, help="key registry file")
    node.add_argument("--verify", choices=["reject", "warn", "off"], default=None)

    def target(sub: argparse.ArgumentParser) -> None:
        where = sub.add_mutually_exclusive_group()
        where.add_argument("--node", default=None, help="daemon address host:port")
        where.add_argument("--local", default=None, help="work on this store file, no daemon")

    add = verbs.add_parser("add", help="add tuples from tuple-text lines")
    add.add_argument("--file", default=None, help="tuple text file (default: stdin)")
    add.add_argument("--sign", default=None, help="private key file; signs tuples that carry no signature")
    add.add_argument("--keys", default=None, help="key registry for --local verification")
    target(add)

    get = verbs.add_parser("get", help="one multi_get")
    get.add_argument("pattern", help='four terms, "*" for a wildcard')
    target(get)

    query = verbs.add_parser("map", help="standing query; prints bindings as they arrive")
    query.add_argument("query_file")
    query.add_argument("--project", default=None, help="comma separated variable names")
    query.add_argument("--duration", type=float, default=None, help="seconds to keep the query open")
    target(query)

    digest = verbs.add_parser("digest", help="tuple count and id-list hash")
    target(digest)

    sim = verbs.add_parser("sim", help="run a scenario script on the simulator")
    sim.add_argument("script")
    sim.add_argument("--trace", default=None, help="write the JSON-lines trace here")
    sim.add_argument("--report", default=None, help="write the JSON report here")

    keygen = verbs.add_parser("keygen", help="print a new signing key line and its registry line")
    keygen.add_argument("--scheme", choices=sorted(SCHEMES), default="ed25519")
    keygen.add_argument("--signer", default=None, help="signer UUID (default: random)")
    return parser


def daemon_url(address: Optional[str], settings: Settings) -> str:
    address = address or f"127.0.0.1:{settings.port}"
    if address.startswith("http://") or address.startswith("https://"):
        return address.rstrip("/")
    return f"http://{address}"


def call_daemon(method: str, url: str, settings: Settings, **kwargs) -> requests.Response:
    try:
        response = requests.request(method, url, timeout=kwargs.pop("timeout", settings.request_timeout * 10), **kwargs)
    except requests.RequestException as e:
        raise NetworkDown(f"{url}: {e}") from e
    if response.status_code >= 500:
        raise NetworkDown(f"{url}: HTTP {response.status_code} {response.text}")
    if response.status_code >= 400:
        raise GinError(f"{url}: HTTP {response.status_code} {response.text}")
    return response


def check_bindable(host: str, port: int) -> None:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as probe:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            probe.bind((host, port))
        except OSError as e:
            raise BindFailure(f"cannot bind {host}:{port}: {e}") from e


# --- verbs ------------------------------------------------------------------


def cmd_node(args, settings: Settings) -> int:
    import uvicorn

    from gin.main import NodeRuntime, create_app

    host, port = args.listen or (args.host, args.port)
    settings = settings.override(
        k=args.k,
        alpha=args.alpha,
        replication=args.replication,
        data_dir=args.data_dir,
        keys_file=args.keys,
        verify=args.verify,
        port=port,
    )
    check_bindable(host, settings.port)
    address = args.advertise or f"{host}:{settings.port}"
    store_path = os.path.join(settings.data_dir, f"tuples-{settings.port}.log")
    bootstrap = [peer for peer in args.bootstrap.split(",") if peer]
    runtime = NodeRuntime(
        settings, address, bootstrap=bootstrap, id_seed=args.id_seed, log_path=args.log, store_path=store_path
    )
    runtime.join()
    uvicorn.run(create_app(runtime), host=host, port=settings.port, log_level=settings.log_level.lower())
    return EXIT_OK


def _read_tuples(path: Optional[str]):
    return read_tuple_file(path) if path else read_tuple_lines(sys.stdin)


def cmd_add(args, settings: Settings) -> int:
    tuples = _read_tuples(args.file)
    if args.sign:
        signer, scheme, private = load_signing_key(args.sign)
        tuples = [
            t if t.signature is not None else sign_tuple(t.model_copy(update={"signer": signer}), private, scheme)
            for t in tuples
        ]
    if args.local:
        registry = KeyRegistry.load(args.keys or settings.keys_file) if (args.keys or settings.keys_file) else KeyRegistry()
        store = TupleStore(path=args.local)
        new, rejected = 0, 0
        try:
            for t in tuples:
                if settings.verify != "off" and verify_tuple(t, registry) == VerifyStatus.INVALID:
                    if settings.verify == "reject":
                        rejected += 1
                        continue
                new += 1 if store.insert(t) else 0
        finally:
            store.close()
        print(json.dumps({"new": new, "received": len(tuples), "rejected": rejected}))
        return EXIT_OK
    url = daemon_url(args.node, settings) + "/add"
    response = call_daemon("POST", url, settings, json={"tuples": [format_tuple_line(t) for t in tuples]})
    print(json.dumps(response.json()))
    return EXIT_OK


def cmd_get(args, settings: Settings) -> int:
    try:
        pattern = parse_pattern(args.pattern)
    except ValueError as e:
        raise GinError(f"bad pattern: {e}") from e
    if args.local:
        store = TupleStore(path=args.local)
        lines = sorted(format_tuple_line(t) for t in store.scan(pattern))
        store.close()
    else:
        response = call_daemon("POST", daemon_url(args.node, settings) + "/get", settings, json={"pattern": args.pattern})
        lines = response.json()["tuples"]
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_map(args, settings: Settings) -> int:
    with open(args.query_file, encoding="utf-8") as f:
        text = f.read()
    projected = [name for name in args.project.split(",") if name] if args.project else None
    q = parse_query_text(text, projected)
    if args.local:
        store = TupleStore(path=args.local)
        bindings = evaluate(q, store.dump())
        store.close()
        for line in sorted(binding.format() for binding in bindings):
            print(line)
        return EXIT_OK
    url = daemon_url(args.node, settings) + "/map"
    body = {"query": text, "projected": projected, "duration": args.duration}
    try:
        with requests.post(url, json=body, stream=True, timeout=None) as response:
            if response.status_code >= 400:
                raise GinError(f"{url}: HTTP {response.status_code} {response.text}")
            for raw in response.iter_lines():
                if not raw:
                    continue
                line = json.loads(raw)
                print("  ".join(f"?{name}={value}" for name, value in line["binding"].items()), flush=True)
    except requests.RequestException as e:
        raise NetworkDown(f"{url}: {e}") from e
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_digest(args, settings: Settings) -> int:
    if args.local:
        store = TupleStore(path=args.local)
        d = store.digest()
        store.close()
        print(f"{d.count} {d.root}")
        return EXIT_OK
    data = call_daemon("GET", daemon_url(args.node, settings) + "/digest", settings).json()
    print(f"{data['count']} {data['root']}")
    return EXIT_OK


def cmd_sim(args, settings: Settings) -> int:
    result = run_simulation(load_script(args.script), trace_path=args.trace)
    text = result.report.model_dump_json(indent=2)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    return EXIT_OK if result.report.passed else EXIT_USAGE


def cmd_keygen(args, settings: Settings) -> int:
    import uuid

    scheme = get_scheme(args.scheme)
    private, public = scheme.generate()
    signer = uuid.UUID(args.signer) if args.signer else uuid.uuid4()
    print(f"# signing key (keep private)\n{signer} {scheme.scheme_id} {private.hex()}")
    print(f"# registry line\n{signer} {scheme.scheme_id} {public.hex()}")
    return EXIT_OK


COMMANDS = {
    "node": cmd_node,
    "add": cmd_add,
    "get": cmd_get,
    "map": cmd_map,
    "digest": cmd_digest,
    "sim": cmd_sim,
    "keygen": cmd_keygen,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings.from_env()
    except ValidationError as e:
        print(f"❌ invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    configure_logging(args.log_level or settings.log_level)
    try:
        return COMMANDS[args.verb](args, settings)
    except GinError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"❌ invalid value: {e}")
        return EXIT_USAGE
    except (OSError, ValueError) as e:
        logger.error(f"❌ {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
