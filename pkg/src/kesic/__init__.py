"""Kerberos-mediated multi-user access control for emulated IoT devices.

Subsystems: ``crypto`` (primitives and keyed derivations), ``wire``
(byte-exact codecs), ``kdc`` (minimal AS/TGS over UDP), ``isv`` (ticket
manager and sync manager), ``device`` (emulated general and
power-constrained devices with a root-of-trust core), ``client`` (SDK and
CLI) and ``harness`` (deterministic adversarial network simulator plus a
loopback live mode).
"""

__version__ = "0.1.0"
