"""TCP transport and the threaded runtime for real (multi-process) nodes.

Framing is a 4-byte big-endian length followed by the canonical JSON of a
NetMessage. Peers handshake by exchanging status messages; a chain-id or
genesis mismatch drops the connection.

The node itself stays single-threaded: listener and per-connection reader
threads only decode frames and post work onto the runtime's event queue,
which one loop thread drains (timers included). Mining runs on its own
thread and posts the sealed header back through the same queue.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import queue
import random
import socket
import struct
import threading
import time
from typing import Callable, Optional

from . import consensus
from .chain import BlockHeader, Genesis
from .node import Env, MAX_MESSAGE_BYTES, NetMessage, Node

logger = logging.getLogger(__name__)

_FRAME_HEADER = struct.Struct(">I")
CONNECT_TIMEOUT_S = 5.0


def send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(_FRAME_HEADER.pack(len(payload)) + payload)


def recv_frame(sock: socket.socket) -> Optional[bytes]:
    header = _recv_exact(sock, _FRAME_HEADER.size)
    if header is None:
        return None
    (length,) = _FRAME_HEADER.unpack(header)
    if length > MAX_MESSAGE_BYTES:
        raise ValueError(f"frame of {length} bytes exceeds limit")
    return _recv_exact(sock, length)


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


class PeerConn:
    """One live connection; usable as an opaque peer id by the node."""

    _ids = itertools.count()

    def __init__(self, sock: socket.socket, label: str):
        self.sock = sock
        self.label = label
        self.id = next(self._ids)
        self._send_lock = threading.Lock()
        self.alive = True

    def send(self, msg: NetMessage) -> bool:
        if not self.alive:
            return False
        try:
            with self._send_lock:
                send_frame(self.sock, msg.encode())
            return True
        except OSError:
            self.alive = False
            return False

    def close(self) -> None:
        self.alive = False
        try:
            self.sock.close()
        except OSError:
            pass

    def __repr__(self):
        return f"<PeerConn {self.label}>"


class _MiningJob:
    def __init__(self):
        self.cancelled = threading.Event()

    def cancel(self) -> None:
        self.cancelled.set()


class _Timer:
    __slots__ = ("fn", "cancelled")

    def __init__(self, fn):
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class TcpEnv(Env):
    def __init__(self, runtime: "NodeRuntime"):
        self.runtime = runtime
        self._rng = random.Random()

    def now(self) -> float:
        return time.time()

    def send(self, peer: PeerConn, msg: NetMessage) -> bool:
        return peer.send(msg)

    def schedule(self, delay_s: float, fn: Callable[[], None]) -> _Timer:
        return self.runtime.schedule(delay_s, fn)

    def start_pow(self, header: BlockHeader, on_sealed) -> _MiningJob:
        job = _MiningJob()

        def mine():
            sealed = consensus.pow_seal(header, cancel=job.cancelled.is_set)
            if sealed is not None and not job.cancelled.is_set():
                self.runtime.post(lambda: on_sealed(sealed))

        threading.Thread(target=mine, name="pow-miner", daemon=True).start()
        return job

    @property
    def rng(self) -> random.Random:
        return self._rng


class NodeRuntime:
    """Owns a Node, its event loop thread, the listener and peer dialing."""

    def __init__(
        self,
        node: Node,
        listen: Optional[str] = None,
        peers: tuple[str, ...] = (),
    ):
        self.node = node
        self.listen = listen
        self.peer_addrs = peers
        self._events: queue.Queue[Callable[[], None]] = queue.Queue()
        self._timers: list[tuple[float, int, _Timer]] = []
        self._timer_seq = itertools.count()
        self._stop = threading.Event()
        self._server_sock: Optional[socket.socket] = None
        self._conns: list[PeerConn] = []
        self._loop_thread: Optional[threading.Thread] = None

    # -- event loop -------------------------------------------------------

    def post(self, fn: Callable[[], None]) -> None:
        self._events.put(fn)

    def schedule(self, delay_s: float, fn: Callable[[], None]) -> _Timer:
        timer = _Timer(fn)
        deadline = time.time() + max(delay_s, 0.0)
        heapq.heappush(self._timers, (deadline, next(self._timer_seq), timer))
        self._events.put(lambda: None)  # wake the loop to re-arm its timeout
        return timer

    def _loop(self) -> None:
        while not self._stop.is_set():
            now = time.time()
            while self._timers and self._timers[0][0] <= now:
                _, _, timer = heapq.heappop(self._timers)
                if not timer.cancelled:
                    try:
                        timer.fn()
                    except Exception:
                        logger.exception("timer handler failed")
            timeout = 0.2
            if self._timers:
                timeout = min(timeout, max(0.0, self._timers[0][0] - time.time()))
            try:
                fn = self._events.get(timeout=timeout)
            except queue.Empty:
                continue
            try:
                fn()
            except Exception:
                logger.exception("event handler failed")

    # -- connections ----------------------------------------------------------

    def _reader(self, conn: PeerConn) -> None:
        try:
            while not self._stop.is_set():
                frame = recv_frame(conn.sock)
                if frame is None:
                    break
                try:
                    msg = NetMessage.decode(frame)
                except (ValueError, KeyError) as exc:
                    logger.warning("bad frame from %s: %s", conn.label, exc)
                    break
                if msg.kind == "status" and (
                    msg.chain_id != self.node.config.chain_id
                    or msg.genesis_hash != self.node.genesis_block.hash
                ):
                    logger.warning("%s speaks a different chain, dropping", conn.label)
                    break
                self.post(lambda m=msg: self.node.on_message(conn, m))
        except OSError:
            pass
        finally:
            conn.close()
            self.post(lambda: self.node.remove_peer(conn))

    def _attach(self, conn: PeerConn) -> None:
        self._conns.append(conn)
        threading.Thread(
            target=self._reader, args=(conn,), name=f"reader-{conn.label}", daemon=True
        ).start()
        self.post(lambda: self.node.on_peer_connected(conn))

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, addr = self._server_sock.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._attach(PeerConn(sock, f"in:{addr[0]}:{addr[1]}"))

    def _dial(self, addr: str) -> None:
        host, port = addr.rsplit(":", 1)
        deadline = time.time() + 30.0
        while not self._stop.is_set() and time.time() < deadline:
            try:
                sock = socket.create_connection((host, int(port)), CONNECT_TIMEOUT_S)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self._attach(PeerConn(sock, f"out:{addr}"))
                return
            except OSError:
                time.sleep(0.3)
        if not self._stop.is_set():
            logger.warning("could not reach peer %s", addr)

    # -- lifecycle ----------------------------------------------------------------

    def start(self) -> None:
        if self.listen:
            host, port = self.listen.rsplit(":", 1)
            self._server_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._server_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._server_sock.bind((host, int(port)))
            self._server_sock.listen(64)
            threading.Thread(target=self._accept_loop, name="acceptor", daemon=True).start()
        self._loop_thread = threading.Thread(target=self._loop, name="node-loop", daemon=True)
        self._loop_thread.start()
        self.post(lambda: self.node.start(TcpEnv(self)))
        for addr in self.peer_addrs:
            threading.Thread(target=self._dial, args=(addr,), daemon=True).start()

    def bound_port(self) -> int:
        return self._server_sock.getsockname()[1]

    def stop(self) -> None:
        self._stop.set()
        self.post(lambda: None)
        if self._server_sock is not None:
            try:
                self._server_sock.close()
            except OSError:
                pass
        for conn in self._conns:
            conn.close()
        self.post(lambda: self.node.stop())
        if self._loop_thread is not None:
            self._loop_thread.join(timeout=2.0)

    # -- synchronous helpers (used by RPC handlers and tests) -------------------------

    def call(self, fn: Callable[[], object], timeout: float = 10.0):
        """Run fn on the node loop and wait for its result."""
        done = threading.Event()
        box: list = [None, None]

        def wrapper():
            try:
                box[0] = fn()
            except Exception as exc:  # surfaced to the caller
                box[1] = exc
            done.set()

        self.post(wrapper)
        if not done.wait(timeout):
            raise TimeoutError("node loop did not respond")
        if box[1] is not None:
            raise box[1]
        return box[0]
