"""Provisioned device identity as loaded by the daemon or the harness."""

from __future__ import annotations

from dataclasses import dataclass

from ..crypto import KeyRole, SymmetricKey
from ..kdc import key_from_b64

GENERAL = "general"
POWER = "power"


@dataclass
class DeviceProfile:
    name: str
    id_dev: int
    dtype: str  # GENERAL or POWER
    id_isv: int
    kl_sync: SymmetricKey
    kl_tkt: SymmetricKey
    kl_key: SymmetricKey
    memory: bytes
    isv_sync_addr: object
    isv_attest_addr: object
    window: int = 16
    freshness_window: int = 300
    state_path: str | None = None

    @classmethod
    def from_json_obj(
        cls,
        obj: dict,
        memory: bytes,
        isv_sync_addr: object,
        isv_attest_addr: object,
        state_path: str | None = None,
    ) -> "DeviceProfile":
        return cls(
            name=obj["name"],
            id_dev=int(obj["id_dev"]),
            dtype=obj["type"],
            id_isv=int(obj["id_isv"]),
            kl_sync=key_from_b64(obj["kl_sync"], KeyRole.LT_SYNC),
            kl_tkt=key_from_b64(obj["kl_tkt"], KeyRole.LT_TICKET),
            kl_key=key_from_b64(obj["kl_key"], KeyRole.LT_SESSKEY),
            memory=memory,
            isv_sync_addr=isv_sync_addr,
            isv_attest_addr=isv_attest_addr,
            window=int(obj.get("window", 16)),
            freshness_window=int(obj.get("freshness_window", 300)),
            state_path=state_path,
        )
