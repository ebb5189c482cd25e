"""Client-side transport abstraction.

The SDK speaks to the KDC and devices over ``udp_call`` and to the ticket
API over ``http_post``. The socket implementation below is used in live
mode; the harness provides a virtual-transport implementation with the
same interface so the SDK code path is identical in both modes.
"""

from __future__ import annotations

import json
import socket
import urllib.error
import urllib.request

from .errors import Timeout


class Network:
    def udp_call(self, addr: object, payload: bytes, timeout: float = 2.0) -> bytes:
        raise NotImplementedError

    def http_post(
        self, url: str, headers: dict[str, str], body: bytes
    ) -> tuple[int, dict[str, str], bytes]:
        raise NotImplementedError


def parse_hostport(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


class SocketNetwork(Network):
    """Real sockets: one ephemeral UDP socket per call, stdlib HTTP client."""

    def udp_call(self, addr: object, payload: bytes, timeout: float = 2.0) -> bytes:
        host, port = parse_hostport(str(addr))
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            sock.settimeout(timeout)
            sock.connect((host, port))
            sock.send(payload)
            try:
                return sock.recv(65535)
            except socket.timeout as exc:
                raise Timeout(f"no reply from {addr}") from exc

    def http_post(
        self, url: str, headers: dict[str, str], body: bytes
    ) -> tuple[int, dict[str, str], bytes]:
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=5.0) as resp:
                return resp.status, dict(resp.headers.items()), resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, dict(exc.headers.items()), exc.read()
        except (urllib.error.URLError, socket.timeout, OSError) as exc:
            raise Timeout(f"ticket API unreachable at {url}: {exc}") from exc


def sim_http_payload(method: str, path: str, headers: dict[str, str], body: bytes) -> bytes:
    """JSON envelope used to carry HTTP over the simulated transport."""
    return json.dumps(
        {"method": method, "path": path, "headers": headers, "body": body.decode("utf-8")},
        sort_keys=True,
    ).encode("utf-8")


def sim_http_response(status: int, headers: dict[str, str], body: bytes) -> bytes:
    return json.dumps(
        {"status": status, "headers": headers, "body": body.decode("utf-8")},
        sort_keys=True,
    ).encode("utf-8")
