"""User-side SDK: Kerberos login, ticket acquisition, device calls.

A :class:`ClientSession` owns a credential cache and walks the full path on
demand: password login against the KDC, a service ticket for the IoT
server, a device ticket from the HTTP ticket API, and finally a raw UDP
exchange with the device itself. Device tickets come in two flavours,
mirroring the two device classes:

* ``general`` tickets carry an expiry instant and may be presented many
  times until it passes;
* ``power`` tickets carry a counter value and are valid for exactly one
  presentation, so the cache burns them the moment they are sent.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import os
from typing import Optional

from . import crypto, kdc, wire
from .clock import Clock, SystemClock
from .crypto import KeyRole, SymmetricKey
from .errors import (
    AuthFailure,
    DeviceRejected,
    FieldFormatError,
    KesicError,
    TicketExpired,
    Timeout,
    error_by_name,
)
from .net import Network
from .rng import Rng

DEFAULT_TGS_ID = "tgs"
DEFAULT_ISV_ID = "isv"
DEFAULT_ST_LIFETIME = 3600
UDP_RETRIES = 3

GENERAL = "general"
POWER = "power"

# Device reply tokens -> outcome verdicts.
_REPLY_VERDICTS = {
    b"INVALID_REQUEST": "invalid-request",
    b"TICKET_EXPIRED": "ticket-expired",
    b"INVALID_COUNTER": "invalid-counter",
    b"AUTH_FAILURE": "auth-failure",
    b"NOT_SYNCED": "not-synced",
}


@dataclasses.dataclass
class ClientConfig:
    """Who the client is and where everything lives.

    ``name`` is the Kerberos principal; ``id_c``/``ad_c`` are the numeric
    user and interface ids that appear in device tickets and on the device
    wire, assigned at provisioning time.
    """

    name: str
    id_c: int
    ad_c: int
    kdc_addr: object
    isv_url: str
    device_addrs: dict[str, object]
    tgs_id: str = DEFAULT_TGS_ID
    isv_id: str = DEFAULT_ISV_ID
    st_lifetime: int = DEFAULT_ST_LIFETIME
    udp_timeout: float = 2.0


@dataclasses.dataclass(frozen=True)
class ServiceOutcome:
    """Result of one device exchange: the device's verdict plus payload."""

    verdict: str
    payload: bytes

    @property
    def accepted(self) -> bool:
        return self.verdict == "accept"


class CredentialCache:
    """In-memory credential store with optional JSON persistence.

    Layout::

        {"tgt": {...} | null,
         "services": {service_id: {"st": ..., "k": ..., "expires": ...}},
         "devices": {device_name: {"dtype": ..., "ticket": ..., ...}}}

    The file is written with owner-only permissions since it holds live
    session keys.
    """

    def __init__(self, path: Optional[str] = None) -> None:
        self.path = path
        self.tgt: Optional[dict] = None
        self.services: dict[str, dict] = {}
        self.devices: dict[str, dict] = {}
        if path is not None and os.path.exists(path):
            self._load(path)

    def _load(self, path: str) -> None:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        self.tgt = obj.get("tgt")
        self.services = dict(obj.get("services", {}))
        self.devices = dict(obj.get("devices", {}))

    def save(self) -> None:
        if self.path is None:
            return
        blob = json.dumps(
            {"tgt": self.tgt, "services": self.services, "devices": self.devices},
            indent=2,
            sort_keys=True,
        )
        tmp = self.path + ".tmp"
        fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        try:
            os.write(fd, blob.encode("utf-8"))
        finally:
            os.close(fd)
        os.replace(tmp, self.path)

    def summary(self, now: int) -> dict:
        """Redacted view for display: no key or ticket material."""
        out: dict = {"tgt": None, "services": {}, "devices": {}}
        if self.tgt is not None:
            out["tgt"] = {
                "expires": self.tgt["lf2"],
                "expired": self.tgt["lf2"] <= now,
            }
        for sid, entry in self.services.items():
            out["services"][sid] = {
                "expires": entry["expires"],
                "expired": entry["expires"] <= now,
            }
        for name, entry in self.devices.items():
            view = {"dtype": entry["dtype"], "device_id": entry["id_dev"]}
            if entry["dtype"] == GENERAL:
                view["expires"] = entry["nonce"]
                view["expired"] = entry["nonce"] <= now
            else:
                view["counter"] = entry["nonce"]
            out["devices"][name] = view
        return out


class ClientSession:
    """One user's view of the ecosystem, bound to a transport and a cache."""

    def __init__(
        self,
        config: ClientConfig,
        network: Network,
        clock: Optional[Clock] = None,
        rng: Optional[Rng] = None,
        cache_path: Optional[str] = None,
    ) -> None:
        self.config = config
        self.network = network
        self.clock = clock if clock is not None else SystemClock()
        self.rng = rng if rng is not None else Rng()
        self.cache = CredentialCache(cache_path)

    # -- Kerberos ---------------------------------------------------------

    def _kdc_call(self, request: dict) -> dict:
        data = self.network.udp_call(
            self.config.kdc_addr,
            json.dumps(request, sort_keys=True).encode("utf-8"),
            timeout=self.config.udp_timeout,
        )
        resp = json.loads(data.decode("utf-8"))
        if "error" in resp:
            raise error_by_name(resp["error"], resp.get("detail", ""))
        return resp

    def login(self, password: str) -> None:
        """Run the AS exchange and cache the resulting TGT.

        Authentication is implicit: the response is sealed under a key
        derived from the password, so a wrong password surfaces as a
        failed unseal and nothing is cached.
        """
        key = crypto.derive_password_key(password, self.config.name.encode("utf-8"))
        resp = self._kdc_call(
            {
                "op": "as",
                "id_c": self.config.name,
                "id_tgs": self.config.tgs_id,
                "ts": self.clock.now(),
            }
        )
        payload = crypto.open_json(key, resp["sealed"])
        self.cache.tgt = {
            "blob": payload["tgt"],
            "k": payload["k"],
            "lf2": payload["lf2"],
            "ts": payload["ts"],
        }
        # A fresh login invalidates nothing else, but stale service tickets
        # under an old TGT are useless; drop them for hygiene.
        self.cache.services.clear()
        self.cache.save()

    def _ensure_service_ticket(self) -> tuple[str, SymmetricKey]:
        """Return a (service ticket, session key) pair for the IoT server."""
        now = self.clock.now()
        entry = self.cache.services.get(self.config.isv_id)
        if entry is not None and entry["expires"] > now:
            return entry["st"], SymmetricKey(base64.b64decode(entry["k"]), KeyRole.SESSION)
        if entry is not None:
            del self.cache.services[self.config.isv_id]
            self.cache.save()

        tgt = self.cache.tgt
        if tgt is None:
            raise AuthFailure("no ticket-granting ticket cached; login first")
        if tgt["lf2"] <= now:
            raise TicketExpired("ticket-granting ticket expired; login again")
        k_c_tgs = SymmetricKey(base64.b64decode(tgt["k"]), KeyRole.SESSION)
        authn = kdc.make_authenticator(
            k_c_tgs, self.config.name, self.config.ad_c, self.clock.now_us(), self.rng
        )
        resp = self._kdc_call(
            {"op": "tgs", "id_v": self.config.isv_id, "tgt": tgt["blob"], "authn": authn}
        )
        payload = crypto.open_json(k_c_tgs, resp["sealed"])
        if payload["id_v"] != self.config.isv_id:
            raise AuthFailure("service ticket names an unexpected service")
        # The exchange does not reveal the ticket's own expiry, so track a
        # conservative estimate from the issue time and the fleet-wide
        # service-ticket lifetime; a stale estimate only costs a re-issue.
        entry = {
            "st": payload["st"],
            "k": payload["k"],
            "expires": payload["ts"] + self.config.st_lifetime,
        }
        self.cache.services[self.config.isv_id] = entry
        self.cache.save()
        return entry["st"], SymmetricKey(base64.b64decode(entry["k"]), KeyRole.SESSION)

    # -- Ticket API -------------------------------------------------------

    def get_iot_ticket(self, device_name: str) -> dict:
        """Fetch a device ticket from the IoT server and cache it."""
        st, k_c_isv = self._ensure_service_ticket()
        authn = kdc.make_authenticator(
            k_c_isv, self.config.name, self.config.ad_c, self.clock.now_us(), self.rng
        )
        token = base64.b64encode(
            json.dumps({"st": st, "authn": authn}, sort_keys=True).encode("utf-8")
        ).decode("ascii")
        body = wire.TicketRequestJson(self.config.name, device_name).to_json().encode("utf-8")
        status, headers, raw = self.network.http_post(
            self.config.isv_url.rstrip("/") + "/ticket",
            {"Authorization": "KESIC " + token, "Content-Type": "application/json"},
            body,
        )
        obj = json.loads(raw.decode("utf-8"))
        if status != 200:
            if status == 401:
                # The server rejected our Kerberos material; whatever we
                # cached is not going to start working again on its own.
                self.cache.services.pop(self.config.isv_id, None)
                self.cache.save()
            raise error_by_name(obj.get("error", "KesicError"), obj.get("detail", ""))
        payload = crypto.open_json(k_c_isv, obj["sealed"])
        resp = wire.TicketResponseJson.from_json(json.dumps(payload))
        kind = {k.lower(): v for k, v in headers.items()}.get("x-nonce-kind", "lifetime")
        entry = {
            "id_dev": resp.device_id,
            "dtype": GENERAL if kind == "lifetime" else POWER,
            "ticket": resp.ticket,
            "session_key": resp.session_key,
            "nonce": resp.nonce,
            "acquired": resp.timestamp,
        }
        self.cache.devices[device_name] = entry
        self.cache.save()
        return entry

    # -- Device exchanges -------------------------------------------------

    def _device_addr(self, device_name: str) -> object:
        try:
            return self.config.device_addrs[device_name]
        except KeyError:
            raise FieldFormatError(f"no address configured for device {device_name!r}") from None

    def call_device(self, device_name: str, cmd: str, force: bool = False) -> ServiceOutcome:
        """Present a cached (or freshly fetched) ticket to a device.

        ``force`` skips the local expiry check on general-device tickets,
        which is how the tooling demonstrates the device-side rejection.
        """
        addr = self._device_addr(device_name)
        entry = self.cache.devices.get(device_name)
        if entry is None:
            entry = self.get_iot_ticket(device_name)

        if entry["dtype"] == GENERAL:
            if entry["nonce"] <= self.clock.now() and not force:
                del self.cache.devices[device_name]
                self.cache.save()
                raise TicketExpired(
                    f"device ticket for {device_name!r} expired; fetch a new one"
                )
            data = self._call_general(addr, entry, cmd)
        else:
            # Single-presentation ticket: burn it before the bytes leave,
            # so a lost reply can never tempt us into a doomed re-send.
            del self.cache.devices[device_name]
            self.cache.save()
            frame = wire.ServiceRequestPC(
                cmd=cmd,
                id_c=self.config.id_c,
                ad_c=self.config.ad_c,
                co_pc=entry["nonce"],
                ticket=entry["ticket"],
            )
            data = self.network.udp_call(addr, frame.encode(), timeout=self.config.udp_timeout)

        outcome = self._parse_reply(data)
        if entry["dtype"] == GENERAL and outcome.verdict == "ticket-expired":
            self.cache.devices.pop(device_name, None)
            self.cache.save()
        return outcome

    def _call_general(self, addr: object, entry: dict, cmd: str) -> bytes:
        key = SymmetricKey(bytes.fromhex(entry["session_key"]), KeyRole.SESSION)
        last: Optional[Timeout] = None
        for _ in range(UDP_RETRIES):
            # Microsecond timestamp: unique per request, so the device can
            # tell honest same-second traffic apart from replays.
            ts = self.clock.now_us()
            frame = wire.ServiceRequestG(
                cmd=cmd,
                id_c=self.config.id_c,
                ad_c=self.config.ad_c,
                lifetime=entry["nonce"],
                ticket=entry["ticket"],
                ts=ts,
                authenticator=crypto.service_authenticator_g(key, ts).hex,
            )
            try:
                return self.network.udp_call(
                    addr, frame.encode(), timeout=self.config.udp_timeout
                )
            except Timeout as exc:
                last = exc
        assert last is not None
        raise last

    @staticmethod
    def _parse_reply(data: bytes) -> ServiceOutcome:
        if data == b"OK":
            return ServiceOutcome("accept", b"")
        if data.startswith(b"OK "):
            return ServiceOutcome("accept", data[3:])
        if data.startswith(b"ERR "):
            verdict = _REPLY_VERDICTS.get(data[4:])
            if verdict is not None:
                return ServiceOutcome(verdict, b"")
        raise KesicError(f"unintelligible device reply: {data!r}")

    # -- Attestation ------------------------------------------------------

    def verify_attestation(self, device_name: str, expected_image: bytes) -> str:
        """Ask a device to attest its memory and check the report locally.

        Returns ``"healthy"`` when the report matches the expected image
        and ``"compromised"`` when it does not. A device that refuses the
        exchange outright raises :class:`DeviceRejected` instead, since
        that says nothing about its memory.
        """
        entry = self.cache.devices.get(device_name)
        if entry is None:
            entry = self.get_iot_ticket(device_name)
        outcome = self.call_device(device_name, wire.CMD_ATTEST)
        if not outcome.accepted:
            raise DeviceRejected(outcome.verdict, "device refused attestation request")
        key = SymmetricKey(bytes.fromhex(entry["session_key"]), KeyRole.SESSION)
        expected = crypto.attest_memory(key, bytes(expected_image))
        reported = outcome.payload.decode("ascii", errors="replace")
        return "healthy" if reported == expected.hex else "compromised"
