"""Fleet provisioning: one generation step feeds every actor's config.

Clients get a password-derived KDC key and numeric (id_c, ad_c) identities;
devices get three independently drawn long-term keys (sync, ticket, session
key roles), a numeric id and a pseudo-program memory image whose SHA-256
the server stores as the attestation reference. The same material can be
handed to in-process actors (simulated mode) or serialized to the JSON
files the daemons load (live mode). All randomness flows through one Rng,
so a seeded fleet is fully reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

from .crypto import KeyRole, SymmetricKey, derive_password_key
from .errors import ScriptError
from .isv import DeviceRecord, IsvConfig
from .kdc import ClientPrincipal, PrincipalDb, key_b64
from .rng import Rng

DEFAULT_MEMORY_SIZE = 2048


@dataclass(frozen=True)
class ClientSpec:
    name: str
    password: str
    services: tuple[str, ...] = ("isv",)


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    dtype: str  # "general" | "power"
    allow: tuple[str, ...] | None = None  # None = every provisioned client
    window: int = 16
    freshness_window: int = 300
    memory_size: int = DEFAULT_MEMORY_SIZE


@dataclass(frozen=True)
class FleetSpec:
    clients: tuple[ClientSpec, ...]
    devices: tuple[DeviceSpec, ...]
    tgs_id: str = "tgs"
    isv_kerberos_id: str = "isv"
    id_isv: int = 1
    tgt_lifetime: int = 36000
    st_lifetime: int = 3600
    iot_ticket_lifetime: int = 600
    attest_timeout: int = 30
    clock_skew: int = 300

    @classmethod
    def from_dict(cls, obj: dict) -> "FleetSpec":
        try:
            clients = tuple(
                ClientSpec(
                    name=c["name"],
                    password=c["password"],
                    services=tuple(c.get("services", ("isv",))),
                )
                for c in obj["clients"]
            )
            devices = tuple(
                DeviceSpec(
                    name=d["name"],
                    dtype=d["type"],
                    allow=tuple(d["allow"]) if "allow" in d else None,
                    window=int(d.get("window", 16)),
                    freshness_window=int(d.get("freshness_window", 300)),
                    memory_size=int(d.get("memory_size", DEFAULT_MEMORY_SIZE)),
                )
                for d in obj["devices"]
            )
        except (KeyError, TypeError) as exc:
            raise ScriptError(f"bad fleet spec: {exc}") from exc
        extra = {
            k: obj[k]
            for k in ("iot_ticket_lifetime", "attest_timeout", "clock_skew", "tgt_lifetime", "st_lifetime")
            if k in obj
        }
        return cls(clients=clients, devices=devices, **extra)


@dataclass
class DeviceMaterial:
    spec: DeviceSpec
    id_dev: int
    kl_sync: SymmetricKey
    kl_tkt: SymmetricKey
    kl_key: SymmetricKey
    memory: bytes
    allow: frozenset[str]


@dataclass
class ClientIdentity:
    spec: ClientSpec
    id_c: int
    ad_c: int


@dataclass
class Fleet:
    spec: FleetSpec
    tgs_key: SymmetricKey
    service_key: SymmetricKey
    clients: dict[str, ClientIdentity] = field(default_factory=dict)
    devices: dict[str, DeviceMaterial] = field(default_factory=dict)
    secrets: list[tuple[str, bytes]] = field(default_factory=list)

    # --- in-process views -------------------------------------------------------

    def kdc_db(self) -> PrincipalDb:
        db = PrincipalDb(tgs_id=self.spec.tgs_id, tgs_key=self.tgs_key)
        for name, ident in self.clients.items():
            db.clients[name] = ClientPrincipal(
                name=name,
                key=derive_password_key(ident.spec.password, name.encode("utf-8")),
                ad_c=ident.ad_c,
                services=frozenset(ident.spec.services),
            )
        db.services[self.spec.isv_kerberos_id] = self.service_key
        return db

    def isv_config(self) -> IsvConfig:
        return IsvConfig(
            kerberos_id=self.spec.isv_kerberos_id,
            id_isv=self.spec.id_isv,
            service_key=self.service_key,
            users={name: (i.id_c, i.ad_c) for name, i in self.clients.items()},
            iot_ticket_lifetime=self.spec.iot_ticket_lifetime,
            attest_timeout=self.spec.attest_timeout,
            clock_skew=self.spec.clock_skew,
        )

    def device_records(self) -> list[DeviceRecord]:
        """Fresh mutable server-side records (one set per Isv instance)."""
        return [
            DeviceRecord(
                name=name,
                id_dev=mat.id_dev,
                dtype=mat.spec.dtype,
                kl_sync=mat.kl_sync,
                kl_tkt=mat.kl_tkt,
                kl_key=mat.kl_key,
                allow=mat.allow,
                window=mat.spec.window,
                ref_memory_hash=hashlib.sha256(mat.memory).digest(),
            )
            for name, mat in self.devices.items()
        ]

    # --- live-mode files ----------------------------------------------------------

    def write_kdc_db(self, path: str) -> None:
        obj = {
            "tgs_id": self.spec.tgs_id,
            "tgs_key": key_b64(self.tgs_key),
            "clients": {
                name: {
                    "password": i.spec.password,
                    "ad_c": i.ad_c,
                    "services": sorted(i.spec.services),
                }
                for name, i in self.clients.items()
            },
            "services": {self.spec.isv_kerberos_id: key_b64(self.service_key)},
        }
        _write_json(path, obj)

    def write_isv_config(self, path: str) -> None:
        obj = {
            "kerberos_id": self.spec.isv_kerberos_id,
            "id_isv": self.spec.id_isv,
            "service_key": key_b64(self.service_key),
            "users": {name: {"id_c": i.id_c, "ad_c": i.ad_c} for name, i in self.clients.items()},
            "iot_ticket_lifetime": self.spec.iot_ticket_lifetime,
            "attest_timeout": self.spec.attest_timeout,
            "clock_skew": self.spec.clock_skew,
            "devices": {
                name: {
                    "id_dev": mat.id_dev,
                    "type": mat.spec.dtype,
                    "kl_sync": key_b64(mat.kl_sync),
                    "kl_tkt": key_b64(mat.kl_tkt),
                    "kl_key": key_b64(mat.kl_key),
                    "allow": sorted(mat.allow),
                    "window": mat.spec.window,
                    "memory_sha256": hashlib.sha256(mat.memory).hexdigest(),
                }
                for name, mat in self.devices.items()
            },
        }
        _write_json(path, obj)

    def write_device_profile(self, name: str, path: str, memory_path: str) -> None:
        mat = self.devices[name]
        with open(memory_path, "wb") as fh:
            fh.write(mat.memory)
        obj = {
            "name": name,
            "id_dev": mat.id_dev,
            "type": mat.spec.dtype,
            "id_isv": self.spec.id_isv,
            "kl_sync": key_b64(mat.kl_sync),
            "kl_tkt": key_b64(mat.kl_tkt),
            "kl_key": key_b64(mat.kl_key),
            "window": mat.spec.window,
            "freshness_window": mat.spec.freshness_window,
        }
        _write_json(path, obj)

    def write_client_identity(self, name: str, path: str) -> None:
        ident = self.clients[name]
        _write_json(path, {"name": name, "id_c": ident.id_c, "ad_c": ident.ad_c})


def _write_json(path: str, obj: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def provision(spec: FleetSpec, rng: Rng) -> Fleet:
    names = [c.name for c in spec.clients] + [d.name for d in spec.devices]
    if len(set(names)) != len(names):
        raise ScriptError("client and device names must be unique")
    fleet = Fleet(
        spec=spec,
        tgs_key=SymmetricKey.generate(rng, KeyRole.PASSWORD),
        service_key=SymmetricKey.generate(rng, KeyRole.PASSWORD),
    )
    fleet.secrets.append(("kdc:tgs_key", fleet.tgs_key.raw()))
    fleet.secrets.append(("kdc:service_key", fleet.service_key.raw()))
    all_client_names = tuple(c.name for c in spec.clients)
    for i, cspec in enumerate(spec.clients):
        ident = ClientIdentity(spec=cspec, id_c=1001 + i, ad_c=2001 + i)
        fleet.clients[cspec.name] = ident
        fleet.secrets.append((f"password:{cspec.name}", cspec.password.encode("utf-8")))
        fleet.secrets.append(
            (
                f"kl_c_as:{cspec.name}",
                derive_password_key(cspec.password, cspec.name.encode("utf-8")).raw(),
            )
        )
    for i, dspec in enumerate(spec.devices):
        mat = DeviceMaterial(
            spec=dspec,
            id_dev=101 + i,
            kl_sync=SymmetricKey.generate(rng, KeyRole.LT_SYNC),
            kl_tkt=SymmetricKey.generate(rng, KeyRole.LT_TICKET),
            kl_key=SymmetricKey.generate(rng, KeyRole.LT_SESSKEY),
            memory=rng.bytes(dspec.memory_size),
            allow=frozenset(dspec.allow if dspec.allow is not None else all_client_names),
        )
        fleet.devices[dspec.name] = mat
        for role in ("kl_sync", "kl_tkt", "kl_key"):
            fleet.secrets.append((f"{role}:{dspec.name}", getattr(mat, role).raw()))
    return fleet
