import pytest

from kesic.harness.scenario import World
from kesic.provision import ClientSpec, DeviceSpec, FleetSpec

# A compact fleet used by unit tests that want direct actor access.
SMALL_FLEET = FleetSpec(
    clients=(
        ClientSpec(name="alice", password="correct-horse-battery-9"),
        ClientSpec(name="bob", password="swordfish-tuesday-17"),
        ClientSpec(name="mallory", password="n0-service-f0r-you", services=()),
    ),
    devices=(
        DeviceSpec(name="bulb", dtype="general"),
        DeviceSpec(name="sensor", dtype="power"),
        DeviceSpec(name="lock", dtype="general", allow=("alice",)),
    ),
)


@pytest.fixture
def world() -> World:
    """A booted simulated world with the small fleet."""
    w = World.build(SMALL_FLEET, seed=1234)
    w.boot_all()
    return w


@pytest.fixture
def cold_world() -> World:
    """Same fleet, but no device has synced yet."""
    return World.build(SMALL_FLEET, seed=1234)
