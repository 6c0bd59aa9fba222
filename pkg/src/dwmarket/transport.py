"""Coordinator <-> agent message transport.

Two hub implementations expose the same round API to the coordinator:

* :class:`InProcessHub` -- agents live in threads of this process and talk
  over queues;
* :class:`TcpHub` -- agents connect over TCP and speak newline-delimited
  JSON (see :mod:`dwmarket.wire`).

Agents implement ``handle(message) -> reply | None``. :class:`AggregatorAgent`
is an agent that fronts a hub of its own, so hierarchies (feeder -> homes ->
devices) are built by nesting.
"""

from __future__ import annotations

import logging
import os
import queue
import socket
import threading
import time
from typing import Iterable

import numpy as np

from dwmarket.core import Bid, ProtocolError
from dwmarket.devices import DeviceSpec, best_response
from dwmarket.wire import (
    BidSubmit,
    FinalAllocate,
    Message,
    PriceAnnounce,
    Register,
    Shutdown,
    decode,
    encode,
)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
LISTEN_ENV = "DWMARKET_LISTEN"


def bid_to_message(iteration: int, device_id: str, bid: Bid) -> BidSubmit:
    return BidSubmit(iteration, device_id, tuple(bid.demand), bid.benefit,
                     bid.partials, bid.benefit_partials)


def message_to_bid(msg: BidSubmit) -> Bid:
    return Bid(np.array(msg.demand), msg.benefit, msg.partials, msg.benefit_partials)


# ---------------------------------------------------------------- agents


class DeviceAgent:
    """A single device answering price announcements with its best response."""

    def __init__(self, device_id: str, spec: DeviceSpec):
        self.device_id = device_id
        self.spec = spec
        self.bids: list[Bid] = []
        self.allocation: FinalAllocate | None = None

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def handle(self, msg: Message):
        if isinstance(msg, PriceAnnounce):
            bid = best_response(np.array(msg.prices), self.spec)
            self.bids.append(bid)
            return bid_to_message(msg.iteration, self.device_id, bid)
        if isinstance(msg, FinalAllocate):
            self.allocation = msg
        return None


class AggregatorAgent:
    """Feeder/home coordinator: fans prices out to a child hub and sums the bids."""

    def __init__(self, node_id: str, children, timeout: float = DEFAULT_TIMEOUT):
        self.device_id = node_id
        self.children = children
        self.timeout = timeout
        self.history: dict[str, list[Bid]] = {cid: [] for cid in children.device_ids}
        self.allocation: FinalAllocate | None = None

    @property
    def horizon(self) -> int:
        return self.children.horizon

    def handle(self, msg: Message):
        from dwmarket.coordinator import aggregate_bids, disaggregate

        if isinstance(msg, PriceAnnounce):
            self.children.broadcast_prices(msg.iteration, msg.prices)
            bids = self.children.collect_bids(msg.iteration, self.children.device_ids, self.timeout)
            for cid, bid in bids:
                self.history[cid].append(bid)
            return bid_to_message(msg.iteration, self.device_id, aggregate_bids(bids))
        if isinstance(msg, FinalAllocate):
            self.allocation = msg
            if msg.weights is not None:
                # the parent's weights index its accepted extreme points; rounds whose
                # bid was a duplicate were not accepted, so history may be longer
                k = len(msg.weights)
                history = {cid: bids[:k] for cid, bids in self.history.items()}
                alloc = disaggregate(np.array(msg.weights), history)
                self.children.send_final(alloc.demand, msg.prices, msg.weights)
            return None
        if isinstance(msg, Shutdown):
            self.children.close()
        return None


# ---------------------------------------------------------------- in-process hub


class InProcessHub:
    """Agents run in worker threads; messages travel over queues."""

    def __init__(self, agents: Iterable, horizon: int | None = None):
        agents = list(agents)
        ids = [a.device_id for a in agents]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ProtocolError(f"duplicate device ids: {dupes}")
        self.agents = {a.device_id: a for a in agents}
        horizons = {a.horizon for a in agents}
        if horizon is None:
            horizon = horizons.pop() if len(horizons) == 1 else None
        bad = sorted(a.device_id for a in agents if horizon is not None and a.horizon != horizon)
        if bad or (agents and horizon is None):
            raise ProtocolError(f"devices with mismatched horizon: {bad}")
        self.horizon = horizon
        self.device_ids = sorted(self.agents)
        self._inbox = {i: queue.Queue() for i in self.device_ids}
        self._outbox: queue.Queue = queue.Queue()
        self._threads = []
        self._closed = False
        for i in self.device_ids:
            t = threading.Thread(target=self._serve, args=(i,), daemon=True, name=f"agent-{i}")
            t.start()
            self._threads.append(t)

    def _serve(self, device_id: str):
        agent = self.agents[device_id]
        inbox = self._inbox[device_id]
        while True:
            msg = inbox.get()
            try:
                reply = agent.handle(msg)
            except Exception as exc:  # surfaced to the coordinator as a protocol failure
                log.exception("agent %s failed", device_id)
                self._outbox.put((device_id, exc))
                reply = None
            if reply is not None:
                self._outbox.put((device_id, reply))
            if isinstance(msg, Shutdown):
                return

    def broadcast_prices(self, iteration: int, prices) -> int:
        msg = PriceAnnounce(iteration, tuple(float(p) for p in prices))
        for i in self.device_ids:
            self._inbox[i].put(msg)
        return len(self.device_ids)

    def collect_bids(self, iteration: int, expected_ids, timeout: float = DEFAULT_TIMEOUT):
        return _collect(self._outbox, iteration, expected_ids, timeout)

    def send_final(self, demand: dict, prices, weights=None):
        for i in self.device_ids:
            if i not in demand:
                raise ProtocolError(f"no final allocation for device {i}")
            self._inbox[i].put(FinalAllocate(
                i, tuple(demand[i]), tuple(prices),
                None if weights is None else tuple(weights)))

    def close(self):
        if self._closed:
            return
        self._closed = True
        for i in self.device_ids:
            self._inbox[i].put(Shutdown())
        for t in self._threads:
            t.join(timeout=5.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _collect(source: queue.Queue, iteration: int, expected_ids, timeout: float):
    """Barrier on one BidSubmit per expected id; returns them sorted by id."""
    expected = set(expected_ids)
    got: dict[str, Bid] = {}
    deadline = time.monotonic() + timeout
    while len(got) < len(expected):
        remaining = deadline - time.monotonic()
        try:
            sender, msg = source.get(timeout=max(remaining, 0.0)) if remaining > 0 \
                else source.get_nowait()
        except queue.Empty:
            missing = sorted(expected - set(got))
            raise ProtocolError(
                f"iteration {iteration}: no bid within {timeout:g}s from {', '.join(missing)}"
            ) from None
        if isinstance(msg, Exception):
            raise ProtocolError(f"device {sender} failed: {msg}") from msg
        if msg is None:
            raise ProtocolError(f"device {sender} disconnected")
        if not isinstance(msg, BidSubmit):
            raise ProtocolError(f"device {sender} sent {type(msg).__name__} instead of a bid")
        if msg.device_id != sender:
            raise ProtocolError(f"connection for {sender} submitted a bid as {msg.device_id}")
        if msg.device_id not in expected:
            raise ProtocolError(f"bid from unknown device {msg.device_id}")
        if msg.iteration != iteration:
            raise ProtocolError(
                f"device {msg.device_id} answered iteration {msg.iteration}, expected {iteration}")
        if msg.device_id in got:
            raise ProtocolError(f"duplicate bid from device {msg.device_id}")
        got[msg.device_id] = message_to_bid(msg)
    return [(i, got[i]) for i in sorted(got)]


# ---------------------------------------------------------------- TCP


def parse_address(addr: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        host, port = default_host, addr
    try:
        return host or default_host, int(port)
    except ValueError:
        raise ProtocolError(f"bad address {addr!r}; expected host:port") from None


def _send(sock: socket.socket, msg: Message):
    sock.sendall((encode(msg) + "\n").encode("utf-8"))


class _LineReader:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buf = b""

    def readline(self) -> bytes | None:
        while b"\n" not in self.buf:
            chunk = self.sock.recv(65536)
            if not chunk:
                return None
            self.buf += chunk
        line, _, self.buf = self.buf.partition(b"\n")
        return line


class TcpHub:
    """Coordinator endpoint: accepts registrations, then runs barrier rounds over TCP."""

    def __init__(self, expected_ids: Iterable[str], horizon: int, listen: str = "127.0.0.1:0"):
        self.expected = sorted(set(expected_ids))
        self.horizon = horizon
        host, port = parse_address(listen)
        self._server = socket.create_server((host, port))
        self.address = self._server.getsockname()[:2]
        self._conns: dict[str, socket.socket] = {}
        self._inbound: queue.Queue = queue.Queue()
        self._readers = []
        self.rejected: list[str] = []
        self._closed = False

    @property
    def device_ids(self) -> list[str]:
        return sorted(self._conns)

    def wait_for_agents(self, timeout: float = DEFAULT_TIMEOUT):
        """Accept connections until every expected device has registered."""
        deadline = time.monotonic() + timeout
        while len(self._conns) < len(self.expected):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                missing = [i for i in self.expected if i not in self._conns]
                if not self._conns:
                    raise ProtocolError(f"no agents registered within {timeout:g}s")
                raise ProtocolError(f"registration timed out; missing {', '.join(missing)}")
            self._server.settimeout(remaining)
            try:
                conn, _ = self._server.accept()
            except socket.timeout:
                continue
            self._handshake(conn, deadline)

    def _handshake(self, conn: socket.socket, deadline: float):
        conn.settimeout(max(deadline - time.monotonic(), 0.1))
        reader = _LineReader(conn)
        try:
            line = reader.readline()
            msg = decode(line) if line is not None else None
        except (OSError, ProtocolError) as exc:
            log.warning("dropping connection during registration: %s", exc)
            conn.close()
            return
        reason = None
        if not isinstance(msg, Register):
            reason = "first message must be a registration"
        elif msg.device_id not in self.expected:
            reason = f"unknown device id {msg.device_id}"
        elif msg.device_id in self._conns:
            reason = f"device {msg.device_id} already registered"
        elif msg.horizon != self.horizon:
            reason = f"horizon {msg.horizon} != {self.horizon}"
        if reason:
            log.warning("rejecting registration: %s", reason)
            self.rejected.append(reason)
            try:
                _send(conn, Shutdown(reason))
            finally:
                conn.close()
            return
        conn.settimeout(None)
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._conns[msg.device_id] = conn
        t = threading.Thread(target=self._read_loop, args=(msg.device_id, reader),
                             daemon=True, name=f"tcp-{msg.device_id}")
        t.start()
        self._readers.append(t)

    def _read_loop(self, device_id: str, reader: _LineReader):
        while True:
            try:
                line = reader.readline()
            except OSError:
                line = None
            if line is None:
                self._inbound.put((device_id, None))
                return
            try:
                self._inbound.put((device_id, decode(line)))
            except ProtocolError as exc:
                self._inbound.put((device_id, exc))

    def _send_to(self, device_id: str, msg: Message):
        try:
            _send(self._conns[device_id], msg)
        except OSError as exc:
            raise ProtocolError(f"cannot reach device {device_id}: {exc}") from None

    def broadcast_prices(self, iteration: int, prices) -> int:
        msg = PriceAnnounce(iteration, tuple(float(p) for p in prices))
        for i in self.device_ids:
            self._send_to(i, msg)
        return len(self._conns)

    def collect_bids(self, iteration: int, expected_ids, timeout: float = DEFAULT_TIMEOUT):
        return _collect(self._inbound, iteration, expected_ids, timeout)

    def send_final(self, demand: dict, prices, weights=None):
        for i in self.device_ids:
            self._send_to(i, FinalAllocate(i, tuple(demand[i]), tuple(prices),
                                           None if weights is None else tuple(weights)))

    def close(self):
        if self._closed:
            return
        self._closed = True
        for i, conn in self._conns.items():
            try:
                _send(conn, Shutdown())
                conn.shutdown(socket.SHUT_WR)
            except OSError:
                pass
        for t in self._readers:
            t.join(timeout=5.0)
        for conn in self._conns.values():
            conn.close()
        self._server.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_tcp_agent(agent, address: str, timeout: float = DEFAULT_TIMEOUT,
                  connect_timeout: float = 10.0) -> FinalAllocate | None:
    """Connect ``agent`` to a coordinator and serve rounds until shutdown."""
    host, port = parse_address(address)
    deadline = time.monotonic() + connect_timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            break
        except OSError as exc:
            if time.monotonic() >= deadline:
                raise ProtocolError(f"cannot connect to {host}:{port}: {exc}") from None
            time.sleep(0.05)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    # a round may take a while when many devices solve before us
    sock.settimeout(None)
    reader = _LineReader(sock)
    try:
        _send(sock, Register(agent.device_id, agent.horizon))
        while True:
            line = reader.readline()
            if line is None:
                raise ProtocolError("coordinator closed the connection")
            msg = decode(line)
            if isinstance(msg, Shutdown):
                if msg.reason:
                    raise ProtocolError(f"coordinator refused {agent.device_id}: {msg.reason}")
                agent.handle(msg)
                return agent.allocation
            reply = agent.handle(msg)
            if reply is not None:
                _send(sock, reply)
    except OSError as exc:
        raise ProtocolError(f"connection to coordinator lost: {exc}") from None
    finally:
        sock.close()


def default_listen(cli_value: str | None) -> str:
    """Listen address: explicit flag, else ``$DWMARKET_LISTEN``, else a fixed loopback port."""
    return cli_value or os.environ.get(LISTEN_ENV) or "127.0.0.1:7878"
