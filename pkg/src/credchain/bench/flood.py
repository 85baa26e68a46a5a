"""Open-loop read-request flooder.

Requests go out on a fixed schedule regardless of how responses are doing,
and every latency is measured from the *scheduled* send time, so a slow
server cannot hide queueing delay behind the client (no coordinated
omission). Timeouts count as errors and stay out of the percentiles. The
first seconds of a run are flagged as warm-up in the raw log; low-rate
tooling artifacts live there and analysts can exclude them.

The client is a pool of persistent raw HTTP/1.1 connections; generic HTTP
libraries top out far below the rates this harness has to sustain.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import time
from dataclasses import dataclass
from typing import Optional, Sequence
from urllib.parse import urlparse

from .reports import LatencyReport

DEFAULT_TIMEOUT_S = 5.0
WARMUP_FLAG_S = 2.0
POOL_CONNECTIONS = 64


class Unreachable(ConnectionError):
    pass


@dataclass(frozen=True)
class FloodSample:
    scheduled_s: float  # offset from run start
    latency_ms: float
    ok: bool
    warmup: bool

    CSV_HEADER = "scheduled_s,latency_ms,ok,warmup"

    def csv_row(self) -> str:
        return (
            f"{self.scheduled_s:.6f},{self.latency_ms:.3f},"
            f"{int(self.ok)},{int(self.warmup)}"
        )


def _build_request(host: str, path: str, method: str, params: dict, req_id: int) -> bytes:
    body = json.dumps(
        {"jsonrpc": "2.0", "id": req_id, "method": method, "params": params}
    ).encode()
    return (
        f"POST {path} HTTP/1.1\r\nHost: {host}\r\n"
        f"Content-Type: application/json\r\nContent-Length: {len(body)}\r\n\r\n"
    ).encode() + body


async def _read_response(reader: asyncio.StreamReader) -> Optional[bytes]:
    status = await reader.readline()
    if not status:
        return None
    content_length = 0
    while True:
        header = await reader.readline()
        if header in (b"\r\n", b""):
            break
        if header.lower().startswith(b"content-length:"):
            content_length = int(header.split(b":", 1)[1])
    body = await reader.readexactly(content_length) if content_length else b""
    if not status.split(b" ", 2)[1:2] == [b"200"]:
        return None
    return body


async def _flood(
    endpoint: str,
    method: str,
    params: dict,
    target_rps: int,
    duration_s: int,
    timeout_s: float,
) -> list[FloodSample]:
    parsed = urlparse(endpoint)
    host, port = parsed.hostname, parsed.port or 80
    path = parsed.path or "/"
    total = target_rps * duration_s
    interval = 1.0 / target_rps
    samples: list[FloodSample] = []
    next_slot = itertools.count()

    # connectivity probe; a dead endpoint should fail loudly, not as errors
    try:
        reader, writer = await asyncio.wait_for(
            asyncio.open_connection(host, port), timeout_s
        )
        writer.write(_build_request(host, path, method, params, 0))
        await writer.drain()
        body = await asyncio.wait_for(_read_response(reader), timeout_s)
        writer.close()
        if body is None or "result" not in json.loads(body):
            raise Unreachable(f"{endpoint}: probe request failed")
    except (OSError, asyncio.TimeoutError, ValueError) as exc:
        raise Unreachable(f"{endpoint}: {exc}") from exc

    start = time.perf_counter()

    async def worker() -> None:
        reader = writer = None
        while True:
            slot = next(next_slot)
            if slot >= total:
                break
            scheduled_off = slot * interval
            scheduled_abs = start + scheduled_off
            delay = scheduled_abs - time.perf_counter()
            if delay > 0:
                await asyncio.sleep(delay)
            ok = False
            try:
                if writer is None:
                    reader, writer = await asyncio.open_connection(host, port)
                writer.write(_build_request(host, path, method, params, slot))
                await writer.drain()
                remaining = timeout_s - (time.perf_counter() - scheduled_abs)
                body = await asyncio.wait_for(
                    _read_response(reader), max(remaining, 0.001)
                )
                if body is not None:
                    data = json.loads(body)
                    ok = isinstance(data, dict) and "result" in data
                else:
                    writer = None  # server closed the connection
            except (OSError, asyncio.TimeoutError, ValueError, asyncio.IncompleteReadError):
                ok = False
                if writer is not None:
                    writer.close()
                writer = None
            latency_ms = (time.perf_counter() - scheduled_abs) * 1000.0
            samples.append(
                FloodSample(
                    scheduled_s=scheduled_off,
                    latency_ms=latency_ms,
                    ok=ok,
                    warmup=scheduled_off < WARMUP_FLAG_S,
                )
            )
        if writer is not None:
            writer.close()

    workers = min(POOL_CONNECTIONS, max(4, target_rps // 8))
    await asyncio.gather(*[worker() for _ in range(workers)])
    return samples


def report_from_samples(
    samples: Sequence[FloodSample], target_rps: int, duration_s: int
) -> LatencyReport:
    completed = [s.latency_ms for s in samples if s.ok]
    errors = len(samples) - len(completed)
    return LatencyReport.from_samples(target_rps, duration_s, completed, errors)


def flood(
    endpoint: str,
    method: str = "registry_check",
    target_rps: int = 100,
    duration_s: int = 60,
    params: Optional[dict] = None,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    raw_out: Optional[str] = None,
) -> LatencyReport:
    if params is None:
        params = {"hash": "0x" + "00" * 32} if method == "registry_check" else {}
    samples = asyncio.run(
        _flood(endpoint, method, params, target_rps, duration_s, timeout_s)
    )
    if raw_out:
        lines = [FloodSample.CSV_HEADER]
        lines.extend(s.csv_row() for s in sorted(samples, key=lambda s: s.scheduled_s))
        with open(raw_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    return report_from_samples(samples, target_rps, duration_s)
