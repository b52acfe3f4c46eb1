import pytest

from blimpsim import world


@pytest.fixture
def empty_room_8x6():
    return world.Scene(world.empty_room(8, 6), [])


@pytest.fixture
def seven_item_scene():
    """The seven-object test inventory placed in a 12 x 6 room."""
    room = world.empty_room(12, 6)
    kinds = world.default_evidence_set()
    spec = world.CrimeSceneSpec("homicide", room, {k: 1.0 for k in kinds}, seed=111)
    return world.generate_scene(spec)
