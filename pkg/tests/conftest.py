import pytest

from patchcast.tensor import active_tape


@pytest.fixture(autouse=True)
def fresh_tape():
    """Tests must not leak tape records into each other."""
    active_tape().records.clear()
    yield
    active_tape().records.clear()
