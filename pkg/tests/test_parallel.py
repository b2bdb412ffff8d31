"""Thread-count resolution and the ordered thread-pool map helper."""

import threading

import pytest

from longipet.errors import ParameterError
from longipet.parallel import ENV_VAR, pool_map, thread_count


def test_default_is_single_threaded(monkeypatch):
    monkeypatch.delenv(ENV_VAR, raising=False)
    assert thread_count() == 1


def test_env_var_sets_default(monkeypatch):
    monkeypatch.setenv(ENV_VAR, "7")
    assert thread_count() == 7


def test_explicit_value_beats_env(monkeypatch):
    monkeypatch.setenv(ENV_VAR, "7")
    assert thread_count(3) == 3


@pytest.mark.parametrize("bad", ["0", "-2", "four", "1.5", ""])
def test_invalid_env_rejected(monkeypatch, bad):
    monkeypatch.setenv(ENV_VAR, bad)
    with pytest.raises(ParameterError):
        thread_count()


def test_invalid_explicit_rejected():
    with pytest.raises(ParameterError):
        thread_count(0)


def test_pool_map_preserves_order():
    items = list(range(20))
    assert pool_map(lambda x: x * x, items, max_workers=4) == [x * x for x in items]


def test_pool_map_serial_matches_threaded():
    items = [3, 1, 4, 1, 5, 9, 2, 6]
    fn = lambda x: x + 100
    assert pool_map(fn, items, max_workers=1) == pool_map(fn, items, max_workers=3)


def test_pool_map_actually_uses_threads():
    seen = set()

    def note(x):
        seen.add(threading.current_thread().name)
        return x

    pool_map(note, list(range(50)), max_workers=1)
    assert seen == {threading.main_thread().name}


def test_pool_map_propagates_errors():
    def boom(x):
        if x == 3:
            raise ValueError("x was 3")
        return x

    with pytest.raises(ValueError):
        pool_map(boom, [1, 2, 3, 4], max_workers=2)


def test_pool_map_empty():
    assert pool_map(lambda x: x, [], max_workers=4) == []
