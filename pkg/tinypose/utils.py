"""
Utility functions.
"""

from collections import OrderedDict, abc
from typing import (Callable, Generic, Iterator, List, Optional, Sequence,
                    TypeVar)

import numpy as np

K = TypeVar('K')
V = TypeVar('V')

__all__ = ('LRUCache', 'FrozenDict', 'freeze', 'rng_stream')


class LRUCache(abc.MutableMapping, Generic[K, V]):
    """
    A mapping that keeps at most ``capacity`` entries and discards the one
    used least recently.

    TinyPose keeps expensive per-model products (point pair feature tables)
    here while many scenes are processed with the same models. Use
    :meth:`get_or_build` to compute a value only on a miss.
    """

    def __init__(self, capacity: Optional[int] = None) -> None:
        if capacity is not None and capacity < 1:
            raise ValueError('Cache capacity must be positive')

        #: Largest number of entries, ``None`` for no limit
        self.capacity = capacity
        #: Lookups answered from the cache
        self.hits = 0
        #: Lookups that had to build a value
        self.misses = 0
        self._entries: 'OrderedDict[K, V]' = OrderedDict()

    def __repr__(self):
        return '<{} entries={} capacity={} hits={} misses={}>'.format(
            type(self).__name__, len(self), self.capacity, self.hits,
            self.misses)

    @property
    def lru(self) -> List[K]:
        """
        Keys from least to most recently used.
        """
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[K]:
        return iter(self._entries)

    def __contains__(self, key: object) -> bool:
        return key in self._entries

    def __getitem__(self, key: K) -> V:
        value = self._entries[key]
        self._entries.move_to_end(key)
        return value

    def __setitem__(self, key: K, value: V) -> None:
        self._entries[key] = value
        self._entries.move_to_end(key)

        while self.capacity is not None and len(self._entries) > self.capacity:
            self._entries.popitem(last=False)

    def __delitem__(self, key: K) -> None:
        del self._entries[key]

    def clear(self) -> None:
        self._entries.clear()
        self.hits = self.misses = 0

    def get_or_build(self, key: K, build: Callable[[], V]) -> V:
        """
        Return the entry for ``key``, calling ``build()`` and storing its
        result when there is none.
        """
        if key in self._entries:
            self.hits += 1
            return self[key]

        self.misses += 1
        value = build()
        self[key] = value
        return value


class FrozenDict(dict):
    """
    An immutable, hashable dictionary used for cache keys.
    """

    def __hash__(self):
        return hash(tuple(sorted(self.items())))

    def _immutable(self, *args, **kws):
        raise TypeError('object is immutable')

    __setitem__ = _immutable
    __delitem__ = _immutable
    clear = _immutable
    setdefault = _immutable  # type: ignore
    popitem = _immutable
    update = _immutable  # type: ignore
    pop = _immutable


def freeze(obj):
    """
    Turn settings, lists and arrays into hashable equivalents.

    Dictionaries become :class:`FrozenDict`, sequences and numpy arrays become
    nested tuples and sets become frozensets.
    """
    if isinstance(obj, dict):
        return FrozenDict((k, freeze(v)) for k, v in obj.items())
    if isinstance(obj, np.ndarray):
        return freeze(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return tuple(freeze(el) for el in obj)
    if isinstance(obj, set):
        return frozenset(obj)
    return obj


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """
    Create an independent random generator for ``(seed, *keys)``.

    Streams for different keys never share state, so work split by class or
    by base index stays reproducible regardless of execution order.

    :param seed: The run seed
    :param keys: Integers identifying the stream (class id, base index, ...)
    """
    entropy: Sequence[int] = (int(seed),) + tuple(int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))
