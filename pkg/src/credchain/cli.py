"""Node runner CLI: start a TCP node from a config file, or spin up a
self-contained demo network with the credential service on HTTP.

Node config (JSON):
  genesis    path to the genesis file
  role       observer | sealer | miner
  sk         hex private key (required for sealer/miner)
  listen     "host:port" or null
  peers      list of "host:port"
  data_dir   chain persistence directory or null
  rpc        optional credential-service block: {listen, docstore_log,
             writers, admins, keystore, cors_origins}
"""

from __future__ import annotations

import json
import logging
import signal
import sys
import threading

import click

from .chain import Genesis
from .crypto import Address, Digest32, KeyPair, keccak_256
from .docstore import AccessControl, AcademicRecord, DocStore, SubjectEntry
from .httpd import RpcHttpServer, make_app
from .node import Node, ROLE_MINER, ROLE_OBSERVER, ROLE_SEALER
from .service import CredentialService, NodeFacade, RpcDispatcher
from .tcpnet import NodeRuntime

logger = logging.getLogger(__name__)


def _parse_sk(text: str) -> int:
    return int(text, 16)


def _load_keypair(config: dict) -> KeyPair:
    if config.get("sk"):
        return KeyPair.from_sk(_parse_sk(config["sk"]))
    return KeyPair.generate()


def _build_service(node: Node, runtime: NodeRuntime, rpc_cfg: dict) -> RpcHttpServer:
    access = AccessControl(
        writers=frozenset(Address.parse(a) for a in rpc_cfg["writers"]),
        admins=frozenset(Address.parse(a) for a in rpc_cfg["admins"]),
    )
    store = DocStore(access, path=rpc_cfg.get("docstore_log"))
    keystore = {}
    for sk_hex in rpc_cfg.get("keystore", []):
        kp = KeyPair.from_sk(_parse_sk(sk_hex))
        keystore[kp.address] = kp
    facade = NodeFacade(node, call=runtime.call)
    service = CredentialService(facade, store, keystore)
    host, port = rpc_cfg["listen"].rsplit(":", 1)
    server = RpcHttpServer(
        make_app(RpcDispatcher(service), rpc_cfg.get("cors_origins", ["*"])),
        host=host,
        port=int(port),
    )
    return server


@click.group()
def main() -> None:
    """Credential-chain node."""
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def run(config_path: str) -> None:
    """Run a node (and optionally the RPC service) from a config file."""
    with open(config_path, encoding="utf-8") as fh:
        config = json.load(fh)
    genesis = Genesis.load(config["genesis"])
    role = {"observer": ROLE_OBSERVER, "sealer": ROLE_SEALER, "miner": ROLE_MINER}[
        config.get("role", "observer")
    ]
    keypair = _load_keypair(config)
    node = Node(genesis, keypair, role=role, data_dir=config.get("data_dir"))
    runtime = NodeRuntime(
        node,
        listen=config.get("listen"),
        peers=tuple(config.get("peers", ())),
    )
    runtime.start()
    logger.info("node %s up, role=%s listen=%s", keypair.address.hex0x, role, config.get("listen"))

    server = None
    if config.get("rpc"):
        server = _build_service(node, runtime, config["rpc"])
        server.start()
        logger.info("rpc service on %s", config["rpc"]["listen"])

    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    try:
        while not stop.is_set():
            stop.wait(0.5)
    finally:
        if server is not None:
            server.stop()
        runtime.stop()


DEMO_SEALER_SK = 0xA11CE
DEMO_ADMIN_SK = 0xAD314
DEMO_PROF_SK = 0x920F
DEMO_STUDENT_SKS = (0x57001, 0x57002, 0x57003)

DEMO_SUBJECTS = (
    ("Computing Theory", "5.2"),
    ("Calculus", "2.7"),
    ("Business Management", "6"),
    ("Programming I", "5.7"),
    ("Discrete Math", "8"),
    ("Principles of Computer Engineering", ""),
    ("Programming II", ""),
    ("Linear Algebra", ""),
    ("Physics", ""),
    ("Statistics", ""),
)


def seed_demo_records(store: DocStore, prof: KeyPair, students: list[KeyPair]) -> None:
    names = [("Rose", "Howard"), ("Ada", "Mclean"), ("Tom", "Ferrer")]
    for i, (student, (name, surname)) in enumerate(zip(students, names)):
        record = AcademicRecord(
            id=Digest32(keccak_256(f"demo-record-{i}".encode())),
            public_key=student.address,
            degree="Computer science",
            issue_date="",
            name=name,
            surname=surname,
            subjects=tuple(
                SubjectEntry(subject, mark, "Basic Core", "23/24")
                for subject, mark in DEMO_SUBJECTS
            ),
        )
        store.put_record(record, prof)


@main.command()
@click.option("--port", default=8545, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def demo(port: int, host: str) -> None:
    """Single-sealer demo chain with seeded records and the RPC service.

    Prints the demo keys; import them in the web UI to log in.
    """
    import time

    from .chain import ChainConfig, Consensus

    sealer = KeyPair.from_sk(DEMO_SEALER_SK)
    admin = KeyPair.from_sk(DEMO_ADMIN_SK)
    prof = KeyPair.from_sk(DEMO_PROF_SK)
    students = [KeyPair.from_sk(sk) for sk in DEMO_STUDENT_SKS]

    config = ChainConfig(
        chain_id=1337,
        consensus=Consensus.POA,
        poa_sealers=(sealer.address,),
    )
    genesis = Genesis(config=config, timestamp=int(time.time()))
    node = Node(genesis, sealer, role=ROLE_SEALER)
    runtime = NodeRuntime(node)
    runtime.start()

    access = AccessControl(
        writers=frozenset({admin.address, prof.address}),
        admins=frozenset({admin.address}),
    )
    store = DocStore(access)
    seed_demo_records(store, prof, students)

    facade = NodeFacade(node, call=runtime.call)
    service = CredentialService(facade, store, {admin.address: admin})
    server = RpcHttpServer(make_app(RpcDispatcher(service)), host=host, port=port)
    server.start()

    click.echo(f"RPC endpoint: http://{host}:{port}/rpc")
    click.echo(f"admin   sk=0x{DEMO_ADMIN_SK:064x} address={admin.address.hex0x}")
    for i, student in enumerate(students):
        click.echo(
            f"student sk=0x{DEMO_STUDENT_SKS[i]:064x} address={student.address.hex0x}"
        )
    click.echo("Ctrl-C to stop.")
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    try:
        while not stop.is_set():
            stop.wait(0.5)
    finally:
        server.stop()
        runtime.stop()


if __name__ == "__main__":
    main()
