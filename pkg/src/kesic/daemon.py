"""Long-running service entry points: KDC, IoT server, emulated device.

Each main binds real sockets around the transport-agnostic handlers and
prints ``READY`` on stdout once it is serving, which is what the live
harness (and shell scripts) wait for. All services are UDP
request/response except the ticket API, which is plain HTTP.
"""

from __future__ import annotations

import argparse
import http.server
import json
import socket
import sys
import threading

from . import kdc as kdc_mod
from .clock import SystemClock, VirtualClock
from .device import GeneralDevice, PowerDevice
from .device.profile import GENERAL, DeviceProfile
from .isv import Isv, IsvConfig
from .net import parse_hostport
from .rng import Rng

_RECV_SIZE = 65535


def _bind_udp(port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind(("127.0.0.1", port))
    return sock


def _announce_ready(what: str) -> None:
    print(f"READY {what}", flush=True)


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# --- KDC ----------------------------------------------------------------------


def kdc_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="kesic-kdc", description="Kerberos KDC (UDP)")
    parser.add_argument("--db", required=True, help="principal database JSON")
    parser.add_argument("--port", type=int, default=8750)
    parser.add_argument("--clock-skew", type=int, default=kdc_mod.DEFAULT_CLOCK_SKEW)
    parser.add_argument("--deterministic-seed", type=int, default=None)
    args = parser.parse_args(argv)

    db = kdc_mod.PrincipalDb.from_json_obj(_load_json(args.db))
    rng = Rng(args.deterministic_seed) if args.deterministic_seed is not None else Rng()
    center = kdc_mod.Kdc(db, rng=rng, clock_skew=args.clock_skew)

    sock = _bind_udp(args.port)
    _announce_ready(f"kdc 127.0.0.1:{args.port}")
    try:
        while True:
            data, src = sock.recvfrom(_RECV_SIZE)
            sock.sendto(center.handle_datagram(data, src), src)
    except KeyboardInterrupt:
        return 0
    finally:
        sock.close()


# --- IoT server ---------------------------------------------------------------


class _TicketHttpHandler(http.server.BaseHTTPRequestHandler):
    def _dispatch(self, method: str) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        status, headers, payload = self.server.isv.tickets.handle_http(
            method, self.path, dict(self.headers.items()), body
        )
        self.send_response(status)
        for key, value in headers.items():
            self.send_header(key, value)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self) -> None:  # noqa: N802 (http.server naming)
        self._dispatch("GET")

    def do_POST(self) -> None:  # noqa: N802
        self._dispatch("POST")

    def log_message(self, fmt: str, *args) -> None:
        pass  # quiet; the audit trail lives in isv.events


class _TicketHttpServer(http.server.ThreadingHTTPServer):
    daemon_threads = True
    isv: Isv


def _udp_pump(sock: socket.socket, handler, tick=None) -> None:
    """recvfrom loop feeding a (data, src, send) handler.

    With a short socket timeout the loop doubles as a ticker, invoking
    ``tick`` periodically (used for attestation-deadline expiry).
    """

    def send(addr, payload: bytes) -> None:
        sock.sendto(payload, addr)

    sock.settimeout(0.25)
    while True:
        try:
            data, src = sock.recvfrom(_RECV_SIZE)
        except socket.timeout:
            if tick is not None:
                tick()
            continue
        except OSError:
            return
        handler(data, src, send)


def isv_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="kesic-isv", description="IoT server (HTTP + UDP)")
    parser.add_argument("--devices", required=True, help="server config JSON")
    parser.add_argument("--http-port", type=int, default=8751)
    parser.add_argument("--sync-port", type=int, default=8752)
    parser.add_argument("--attest-port", type=int, default=8753)
    parser.add_argument("--ticket-lifetime", type=int, default=None)
    parser.add_argument("--state", default=None, help="counter persistence JSON")
    parser.add_argument("--deterministic-seed", type=int, default=None)
    args = parser.parse_args(argv)

    config, records = IsvConfig.from_json_obj(_load_json(args.devices))
    if args.ticket_lifetime is not None:
        config.iot_ticket_lifetime = args.ticket_lifetime
    rng = Rng(args.deterministic_seed) if args.deterministic_seed is not None else Rng()
    isv = Isv(config, records, rng=rng, state_path=args.state)

    sync_sock = _bind_udp(args.sync_port)
    attest_sock = _bind_udp(args.attest_port)
    threading.Thread(
        target=_udp_pump,
        args=(sync_sock, isv.sync.handle_sync),
        kwargs={"tick": isv.sync.expire_pending},
        daemon=True,
    ).start()
    threading.Thread(
        target=_udp_pump, args=(attest_sock, isv.sync.handle_attest), daemon=True
    ).start()

    httpd = _TicketHttpServer(("127.0.0.1", args.http_port), _TicketHttpHandler)
    httpd.isv = isv
    _announce_ready(
        f"isv http=127.0.0.1:{args.http_port} sync=:{args.sync_port} attest=:{args.attest_port}"
    )
    try:
        httpd.serve_forever(poll_interval=0.25)
    except KeyboardInterrupt:
        return 0
    finally:
        httpd.server_close()
        sync_sock.close()
        attest_sock.close()


# --- Emulated device ------------------------------------------------------------


def device_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="kesic-device", description="Emulated IoT device (UDP)")
    parser.add_argument("--profile", required=True, help="device profile JSON")
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--isv-addr", required=True, metavar="HOST:PORT", help="server sync port")
    parser.add_argument(
        "--isv-attest-addr",
        default=None,
        metavar="HOST:PORT",
        help="server attestation port (default: sync port + 1)",
    )
    parser.add_argument("--memory-image", required=True, help="initial memory contents")
    parser.add_argument(
        "--virtual-clock",
        type=int,
        default=None,
        metavar="EPOCH",
        help="run on a frozen virtual clock starting at EPOCH",
    )
    parser.add_argument("--state", default=None, help="sync-counter persistence JSON")
    args = parser.parse_args(argv)

    with open(args.memory_image, "rb") as fh:
        memory = fh.read()
    sync_host, sync_port = parse_hostport(args.isv_addr)
    if args.isv_attest_addr is not None:
        attest_addr = parse_hostport(args.isv_attest_addr)
    else:
        attest_addr = (sync_host, sync_port + 1)
    profile = DeviceProfile.from_json_obj(
        _load_json(args.profile),
        memory=memory,
        isv_sync_addr=(sync_host, sync_port),
        isv_attest_addr=attest_addr,
        state_path=args.state,
    )
    clock = VirtualClock(args.virtual_clock) if args.virtual_clock is not None else SystemClock()
    device_cls = GeneralDevice if profile.dtype == GENERAL else PowerDevice
    device = device_cls(profile, clock)

    sock = _bind_udp(args.port)

    def send(addr, payload: bytes) -> None:
        sock.sendto(payload, addr)

    # Sync before serving: first contact initializes time (general) or the
    # counter window (power-constrained, via the attestation round trip).
    sock.settimeout(0.5)
    device.boot(send)
    for _ in range(20):
        if device.synced:
            break
        try:
            data, src = sock.recvfrom(_RECV_SIZE)
        except socket.timeout:
            device.boot(send)  # retransmit the pending sync request
            continue
        device.handle_datagram(data, src, send)
    if not device.synced:
        print("ERROR sync with server failed", file=sys.stderr, flush=True)
        return 1

    _announce_ready(f"device {profile.name} 127.0.0.1:{args.port}")
    sock.settimeout(None)
    try:
        while True:
            data, src = sock.recvfrom(_RECV_SIZE)
            device.handle_datagram(data, src, send)
    except KeyboardInterrupt:
        return 0
    finally:
        sock.close()


if __name__ == "__main__":
    name = sys.argv[1] if len(sys.argv) > 1 else ""
    mains = {"kdc": kdc_main, "isv": isv_main, "device": device_main}
    if name not in mains:
        print("usage: python -m kesic.daemon {kdc|isv|device} ...", file=sys.stderr)
        sys.exit(2)
    sys.exit(mains[name](sys.argv[2:]))
