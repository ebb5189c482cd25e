"""Bundled adversarial regression suite.

Each entry is an ordinary scenario script; together they exercise every
rejection path in the ecosystem — replay on all five protocol legs,
in-flight tampering, credential misuse, policy denials, quarantine and
loss/timeout behaviour — plus the recovery that should follow. The suite
is deterministic: run twice with the same seed it must produce
byte-identical reports, which turns every one of these attacks into a
regression test.

``attack_suite`` additionally self-checks coverage: the union of observed
server audit errors, device verdicts and client-side errors must include
every rejection variant the implementation can produce, so silently losing
a scenario (or a rejection path) fails the suite.
"""

from __future__ import annotations

import copy
import json
from typing import Optional

from ..errors import ScriptError
from .scenario import run_scenario

# Rejection vocabulary that the suite must observe to be considered whole.
REQUIRED_ISV_ERRORS = {
    ("sync-reject", "CounterOutOfRange"),
    ("sync-reject", "AuthFailure"),
    ("attest-reject", "AuthFailure"),
    ("attest-reject", "AttestationMismatch"),
    ("attest-reject", "Timeout"),
    ("ticket-denied", "KerberosAuthFailure"),
    ("ticket-denied", "NotAuthorized"),
    ("ticket-denied", "UnknownDevice"),
    ("ticket-denied", "DeviceAsleep"),
    ("ticket-denied", "DeviceUnhealthy"),
}
REQUIRED_DEVICE_VERDICTS = {
    "invalid-request",
    "ticket-expired",
    "invalid-counter",
    "auth-failure",
    "not-synced",
}
REQUIRED_CLIENT_ERRORS = {"AuthFailure", "NotAuthorized", "TicketExpired", "Timeout"}


def _s(name: str, steps: list[dict], autoboot: bool = True) -> dict:
    return {"name": name, "autoboot": autoboot, "steps": steps}


ATTACKS: list[dict] = [
    _s(
        "happy-path-general",
        [
            {"op": "login", "client": "alice"},
            {"op": "call", "client": "alice", "device": "bulb", "cmd": "LED_ON", "expect_verdict": "accept"},
            {"op": "expect_led", "device": "bulb", "on": True},
            {"op": "call", "client": "alice", "device": "bulb", "cmd": "LED_OFF", "expect_verdict": "accept"},
            {"op": "expect_led", "device": "bulb", "on": False},
            {"op": "attest", "client": "alice", "device": "bulb", "expect": "healthy"},
        ],
    ),
    _s(
        "happy-path-power",
        [
            {"op": "login", "client": "alice"},
            {"op": "call", "client": "alice", "device": "sensor", "cmd": "LED_ON", "expect_verdict": "accept"},
            {"op": "expect_led", "device": "sensor", "on": True},
        ],
    ),
    _s(
        "wrong-password",
        [
            {"op": "login", "client": "alice", "password": "let-me-in", "expect_error": "AuthFailure"},
            {"op": "note", "text": "correct password still works afterwards"},
            {"op": "login", "client": "alice"},
            {"op": "call", "client": "alice", "device": "bulb", "cmd": "LED_ON", "expect_verdict": "accept"},
        ],
    ),
    _s(
        "service-eligibility-denied",
        [
            {"op": "login", "client": "mallory"},
            {"op": "get_ticket", "client": "mallory", "device": "bulb", "expect_error": "NotAuthorized"},
        ],
    ),
    _s(
        "device-allow-list-denied",
        [
            {"op": "login", "client": "bob"},
            {"op": "get_ticket", "client": "bob", "device": "lock", "expect_error": "NotAuthorized"},
            {"op": "note", "text": "same credentials are fine for an allowed device"},
            {"op": "get_ticket", "client": "bob", "device": "bulb"},
        ],
    ),
    _s(
        "unknown-device",
        [
            {"op": "login", "client": "alice"},
            {"op": "get_ticket", "client": "alice", "device": "toaster", "expect_error": "UnknownDevice"},
        ],
    ),
    _s(
        "power-device-asleep",
        [
            {"op": "login", "client": "alice"},
            {"op": "sleep_device", "device": "sensor"},
            {"op": "get_ticket", "client": "alice", "device": "sensor", "expect_error": "DeviceAsleep"},
        ],
    ),
    _s(
        "compromised-memory-quarantine",
        [
            {"op": "login", "client": "alice"},
            {"op": "sleep_device", "device": "sensor"},
            {"op": "mutate_memory", "device": "sensor", "offset": 17},
            {"op": "wake_device", "device": "sensor"},
            {"op": "expect_event", "actor": "isv", "event": "attest-reject", "device": "sensor", "error": "AttestationMismatch"},
            {"op": "expect_synced", "device": "sensor", "synced": False},
            {"op": "get_ticket", "client": "alice", "device": "sensor", "expect_error": "DeviceUnhealthy"},
            {"op": "note", "text": "restoring the image and re-attesting lifts the quarantine"},
            {"op": "restore_memory", "device": "sensor"},
            {"op": "wake_device", "device": "sensor"},
            {"op": "expect_synced", "device": "sensor", "synced": True},
            {"op": "call", "client": "alice", "device": "sensor", "cmd": "LED_ON", "expect_verdict": "accept"},
        ],
    ),
    _s(
        "replay-stale-sync-request",
        [
            {"op": "capture_next", "slot": "syncreq", "src": "dev:bulb", "dst": "isv:sync"},
            {"op": "boot_device", "device": "bulb"},
            {"op": "boot_device", "device": "bulb"},
            {"op": "replay_slot", "slot": "syncreq"},
            {"op": "expect_event", "actor": "isv", "event": "sync-reject", "device": "bulb", "error": "CounterOutOfRange"},
        ],
    ),
    _s(
        "replay-sync-response",
        [
            {"op": "capture_next", "slot": "syncresp", "src": "isv:sync", "dst": "dev:bulb"},
            {"op": "boot_device", "device": "bulb"},
            {"op": "replay_slot", "slot": "syncresp"},
            {"op": "expect_event", "actor": "dev:bulb", "event": "sync-reject", "error": "AuthFailure"},
            {"op": "expect_synced", "device": "bulb", "synced": True},
        ],
    ),
    _s(
        "replay-attestation-report",
        [
            {"op": "capture_next", "slot": "report", "src": "dev:sensor", "dst": "isv:attest"},
            {"op": "wake_device", "device": "sensor"},
            {"op": "sleep_device", "device": "sensor"},
            {"op": "drop_next", "src": "dev:sensor", "dst": "isv:attest"},
            {"op": "wake_device", "device": "sensor"},
            {"op": "expect_synced", "device": "sensor", "synced": False},
            {"op": "replay_slot", "slot": "report"},
            {"op": "expect_event", "actor": "isv", "event": "attest-reject", "device": "sensor", "error": "AuthFailure"},
            {"op": "note", "text": "a replayed stale report is not treated as compromise"},
            {"op": "expect_no_event", "actor": "isv", "event": "attest-reject", "device": "sensor", "error": "AttestationMismatch"},
            {"op": "wake_device", "device": "sensor"},
            {"op": "expect_synced", "device": "sensor", "synced": True},
            {"op": "login", "client": "alice"},
            {"op": "get_ticket", "client": "alice", "device": "sensor"},
        ],
        autoboot=False,
    ),
    _s(
        "attestation-report-lost",
        [
            {"op": "drop_next", "src": "dev:sensor", "dst": "isv:attest"},
            {"op": "wake_device", "device": "sensor"},
            {"op": "expect_synced", "device": "sensor", "synced": False},
            {"op": "advance_clock", "seconds": 31},
            {"op": "expect_event", "actor": "isv", "event": "attest-reject", "device": "sensor", "error": "Timeout"},
            {"op": "wake_device", "device": "sensor"},
            {"op": "expect_synced", "device": "sensor", "synced": True},
        ],
        autoboot=False,
    ),
    _s(
        "replay-service-request-within-window",
        [
            {"op": "login", "client": "alice"},
            {"op": "capture_next", "slot": "svc", "src": "client:alice", "dst": "dev:bulb"},
            {"op": "call", "client": "alice", "device": "bulb", "cmd": "LED_ON", "expect_verdict": "accept"},
            {"op": "replay_slot", "slot": "svc"},
            {"op": "expect_event", "actor": "dev:bulb", "event": "service", "verdict": "invalid-request"},
        ],
    ),
    _s(
        "replay-service-request-beyond-window",
        [
            {"op": "login", "client": "alice"},
            {"op": "capture_next", "slot": "svc", "src": "client:alice", "dst": "dev:bulb"},
            {"op": "call", "client": "alice", "device": "bulb", "cmd": "LED_ON", "expect_verdict": "accept"},
            {"op": "advance_clock", "seconds": 301},
            {"op": "replay_slot", "slot": "svc"},
            {"op": "expect_event", "actor": "dev:bulb", "event": "service", "verdict": "invalid-request"},
        ],
    ),
    _s(
        "replay-consumed-counter-ticket",
        [
            {"op": "login", "client": "alice"},
            {"op": "capture_next", "slot": "svc", "src": "client:alice", "dst": "dev:sensor"},
            {"op": "call", "client": "alice", "device": "sensor", "cmd": "LED_ON", "expect_verdict": "accept"},
            {"op": "replay_slot", "slot": "svc"},
            {"op": "expect_event", "actor": "dev:sensor", "event": "service", "verdict": "invalid-counter"},
        ],
    ),
    _s(
        "replay-ticket-api-token",
        [
            {"op": "login", "client": "alice"},
            {"op": "capture_next", "slot": "http", "src": "client:alice", "dst": "isv:http"},
            {"op": "get_ticket", "client": "alice", "device": "bulb"},
            {"op": "replay_slot", "slot": "http"},
            {"op": "expect_event", "actor": "isv", "event": "ticket-denied", "error": "KerberosAuthFailure"},
        ],
    ),
    _s(
        "tamper-sync-request",
        [
            {"op": "tamper_next", "src": "dev:bulb", "dst": "isv:sync", "offset": 39, "xor": 1},
            {"op": "boot_device", "device": "bulb"},
            {"op": "expect_event", "actor": "isv", "event": "sync-reject", "device": "bulb", "error": "AuthFailure"},
            {"op": "expect_synced", "device": "bulb", "synced": False},
            {"op": "boot_device", "device": "bulb"},
            {"op": "expect_synced", "device": "bulb", "synced": True},
        ],
        autoboot=False,
    ),
    _s(
        "tamper-service-request",
        [
            {"op": "login", "client": "alice"},
            {"op": "get_ticket", "client": "alice", "device": "bulb"},
            {"op": "tamper_next", "src": "client:alice", "dst": "dev:bulb", "offset": 16, "xor": 1},
            {"op": "call", "client": "alice", "device": "bulb", "cmd": "LED_ON", "expect_verdict": "auth-failure"},
            {"op": "expect_led", "device": "bulb", "on": False},
        ],
    ),
    _s(
        "service-before-sync",
        [
            {"op": "login", "client": "alice"},
            {"op": "call", "client": "alice", "device": "bulb", "cmd": "LED_ON", "expect_verdict": "not-synced"},
        ],
        autoboot=False,
    ),
    _s(
        "device-unreachable",
        [
            {"op": "login", "client": "alice"},
            {"op": "get_ticket", "client": "alice", "device": "bulb"},
            {"op": "drop_next", "src": "client:alice", "dst": "dev:bulb"},
            {"op": "drop_next", "src": "client:alice", "dst": "dev:bulb"},
            {"op": "drop_next", "src": "client:alice", "dst": "dev:bulb"},
            {"op": "call", "client": "alice", "device": "bulb", "cmd": "LED_ON", "expect_error": "Timeout"},
        ],
    ),
    _s(
        "counter-ticket-lost-in-flight",
        [
            {"op": "login", "client": "alice"},
            {"op": "get_ticket", "client": "alice", "device": "sensor"},
            {"op": "drop_next", "src": "client:alice", "dst": "dev:sensor"},
            {"op": "call", "client": "alice", "device": "sensor", "cmd": "LED_ON", "expect_error": "Timeout"},
            {"op": "note", "text": "the burnt ticket is never re-sent; a fresh one succeeds"},
            {"op": "call", "client": "alice", "device": "sensor", "cmd": "LED_ON", "expect_verdict": "accept"},
        ],
    ),
    _s(
        "expired-ticket-refused-then-forced",
        [
            {"op": "login", "client": "alice"},
            {"op": "get_ticket", "client": "alice", "device": "bulb"},
            {"op": "advance_clock", "seconds": 601},
            {"op": "call", "client": "alice", "device": "bulb", "cmd": "LED_ON", "expect_error": "TicketExpired"},
            {"op": "note", "text": "--force sends anyway and the device itself rejects"},
            {"op": "get_ticket", "client": "alice", "device": "bulb"},
            {"op": "advance_clock", "seconds": 601},
            {"op": "call", "client": "alice", "device": "bulb", "cmd": "LED_ON", "force": True, "expect_verdict": "ticket-expired"},
        ],
    ),
    _s(
        "duplicate-delivery-is-harmless",
        [
            {"op": "login", "client": "alice"},
            {"op": "duplicate_next", "src": "client:alice", "dst": "dev:bulb"},
            {"op": "call", "client": "alice", "device": "bulb", "cmd": "LED_ON", "expect_verdict": "accept"},
            {"op": "expect_event", "actor": "dev:bulb", "event": "service", "verdict": "invalid-request"},
            {"op": "expect_led", "device": "bulb", "on": True},
        ],
    ),
]


def attack_names() -> list[str]:
    return [script["name"] for script in ATTACKS]


def attack_suite(seed: Optional[int] = 0) -> dict:
    """Run every bundled attack scenario and aggregate a deterministic report."""
    seed = 0 if seed is None else seed
    reports = []
    for script in ATTACKS:
        script = copy.deepcopy(script)
        # Every scenario, adversarial or not, must leave the wire free of
        # secret material; check it as a final implicit step.
        script["steps"].append({"op": "expect_transcript_clean"})
        reports.append(run_scenario(script, seed=seed))

    observed_isv: set[tuple[str, str]] = set()
    observed_verdicts: set[str] = set()
    observed_client: set[str] = set()
    for report in reports:
        for event in report["events"]:
            if event.get("actor") == "isv" and "error" in event:
                observed_isv.add((event["event"], event["error"]))
            elif "verdict" in event:
                observed_verdicts.add(event["verdict"])
        for step in report["steps"]:
            if "error" in step:
                observed_client.add(step["error"])
            result = step.get("result")
            if isinstance(result, dict) and result.get("verdict"):
                observed_verdicts.add(result["verdict"])

    missing = sorted(
        [f"isv:{ev}:{err}" for ev, err in REQUIRED_ISV_ERRORS - observed_isv]
        + [f"device:{v}" for v in REQUIRED_DEVICE_VERDICTS - observed_verdicts]
        + [f"client:{e}" for e in REQUIRED_CLIENT_ERRORS - observed_client]
    )
    return {
        "suite": "attacks",
        "seed": seed,
        "scenarios": reports,
        "coverage_missing": missing,
        "ok": all(r["ok"] for r in reports) and not missing,
    }


def suite_report_json(seed: Optional[int] = 0) -> str:
    """Canonical serialized form, used for determinism comparisons."""
    return json.dumps(attack_suite(seed), indent=2, sort_keys=True)


if __name__ == "__main__":
    raise ScriptError("use the simulator CLI: kesic-sim attacks")
