"""Read-only frame store with a shared, initialise-once LRU cache."""
from __future__ import annotations

import os
import threading
from collections import OrderedDict
from concurrent.futures import Future
from typing import Callable, Hashable, Sequence

import numpy as np

from .frames import Frame, band_limit, resample_bicubic, to_luma

DEFAULT_CACHE_MB = 512


class InitOnceCache:
    """Thread-safe memo: each key is computed exactly once while resident.

    Entries are evicted least-recently-used once the byte budget is exceeded.
    """

    def __init__(self, budget_bytes: int):
        self.budget = int(budget_bytes)
        self._lock = threading.Lock()
        self._entries: OrderedDict[Hashable, Future] = OrderedDict()
        self._sizes: dict[Hashable, int] = {}
        self._used = 0
        self.hits = 0
        self.misses = 0

    def get(self, key: Hashable, compute: Callable[[], object]):
        with self._lock:
            fut = self._entries.get(key)
            if fut is not None:
                self._entries.move_to_end(key)
                self.hits += 1
                owner = False
            else:
                fut = Future()
                self._entries[key] = fut
                self.misses += 1
                owner = True
        if not owner:
            return fut.result()
        try:
            value = compute()
        except BaseException as exc:
            with self._lock:
                self._entries.pop(key, None)
            fut.set_exception(exc)
            raise
        fut.set_result(value)
        self._account(key, value)
        return value

    def _account(self, key, value):
        size = _nbytes(value)
        with self._lock:
            if key not in self._entries:
                return
            self._sizes[key] = size
            self._used += size
            while self._used > self.budget and len(self._entries) > 1:
                old, fut = next(iter(self._entries.items()))
                if old == key or not fut.done():
                    break
                self._entries.pop(old)
                self._used -= self._sizes.pop(old, 0)

    def __len__(self):
        return len(self._entries)


def _nbytes(value) -> int:
    if isinstance(value, np.ndarray) or hasattr(value, "nbytes"):
        return int(value.nbytes)
    if isinstance(value, (tuple, list)):
        return sum(_nbytes(v) for v in value)
    return 64


def cache_budget_from_env() -> int:
    mb = os.environ.get("SELFX_CACHE_MB")
    try:
        mb = float(mb) if mb else DEFAULT_CACHE_MB
    except ValueError:
        mb = DEFAULT_CACHE_MB
    return int(mb * 1024 * 1024)


class FrameStore:
    """A video held in memory plus the derived images searches reuse."""

    def __init__(self, frames: Sequence, cache_bytes: int | None = None):
        arrays = []
        for f in frames:
            data = f.data if isinstance(f, Frame) else Frame(f).data
            arrays.append(data)
        if not arrays:
            raise ValueError("empty video")
        shape = arrays[0].shape
        if any(a.shape != shape for a in arrays):
            raise ValueError("all frames must share one shape")
        self.frames = arrays
        self.lumas = []
        for a in arrays:
            y = to_luma(a)
            y.setflags(write=False)
            self.lumas.append(y)
        self.cache = InitOnceCache(cache_budget_from_env() if cache_bytes is None else cache_bytes)
        # retrieval results keyed by (kind, t, origin, config)
        self.memo = InitOnceCache(1 << 40)

    def __len__(self):
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].shape[0]

    @property
    def width(self) -> int:
        return self.frames[0].shape[1]

    @property
    def channels(self) -> int:
        return self.frames[0].shape[2]

    def luma(self, j: int) -> np.ndarray:
        return self.lumas[j]

    def band_limited(self, j: int, scale: float) -> np.ndarray:
        return self.cache.get(("band", j, scale), lambda: band_limit(self.lumas[j], scale))

    def upscaled(self, t: int, scale: float) -> np.ndarray:
        return self.cache.get(("up", t, scale), lambda: resample_bicubic(self.lumas[t], scale))

    def derived(self, key: Hashable, compute: Callable[[], np.ndarray]) -> np.ndarray:
        return self.cache.get(key, compute)
