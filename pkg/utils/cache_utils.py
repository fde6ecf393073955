import json
import logging
import os
import threading
from typing import Callable, Dict, Hashable, Optional, Tuple

from config import CACHE_DIR, CACHE_FILE

logger = logging.getLogger(__name__)

CACHE_VERSION = 1


class KernelCache:
    """Lock-protected memo for radial kernel values.

    Two stores: whole profile tables (numpy arrays keyed by q, band and grid
    policy) and scalar J values keyed by (q, d, t). Only scalars are persisted.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._tables: Dict[Hashable, object] = {}
        self._scalars: Dict[Tuple[int, int, float], float] = {}
        self.hits = 0
        self.misses = 0

    def get_table(self, key: Hashable, builder: Callable[[], object]):
        with self._lock:
            table = self._tables.get(key)
            if table is not None:
                self.hits += 1
                return table
            self.misses += 1
        # Built outside the lock; two racing builders produce identical tables.
        table = builder()
        with self._lock:
            return self._tables.setdefault(key, table)

    def get_scalar(self, key: Tuple[int, int, float], builder: Callable[[], float]) -> float:
        with self._lock:
            value = self._scalars.get(key)
            if value is not None:
                self.hits += 1
                return value
            self.misses += 1
        value = float(builder())
        with self._lock:
            return self._scalars.setdefault(key, value)

    def clear(self):
        with self._lock:
            self._tables.clear()
            self._scalars.clear()
            self.hits = 0
            self.misses = 0

    def info(self) -> dict:
        with self._lock:
            return {
                "tables": len(self._tables),
                "scalars": len(self._scalars),
                "hits": self.hits,
                "misses": self.misses,
                "directory": os.path.abspath(CACHE_DIR),
            }

    def save(self, path: str = CACHE_FILE) -> bool:
        """Writes scalar kernel values to disk."""
        with self._lock:
            if not self._scalars:
                logger.info("Skipping kernel cache save: no scalar entries.")
                return False
            entries = {f"{q}|{d}|{t!r}": v for (q, d, t), v in sorted(self._scalars.items())}
        try:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump({"version": CACHE_VERSION, "count": len(entries), "entries": entries}, f, indent=1)
            logger.info("✅ Kernel cache saved (%d scalars) to %s", len(entries), path)
            return True
        except OSError as e:
            logger.warning("⚠️ Error saving kernel cache: %s - %s", type(e).__name__, e)
            return False

    def load(self, path: str = CACHE_FILE) -> int:
        """Loads scalar kernel values; a corrupt or inconsistent file resets the cache."""
        if not os.path.exists(path):
            logger.info("Kernel cache file not found. Starting with an empty cache.")
            return 0
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
            if data.get("version") != CACHE_VERSION:
                raise ValueError(f"Cache version mismatch: {data.get('version')}")
            entries = data.get("entries", {})
            if data.get("count") != len(entries):
                raise ValueError("Cache inconsistency: count does not match entries")
            loaded = {}
            for key, value in entries.items():
                q, d, t = key.split("|")
                loaded[(int(q), int(d), float(t))] = float(value)
        except (OSError, ValueError, TypeError, AttributeError) as e:
            logger.warning("⚠️ Error loading kernel cache: %s - %s. Starting fresh.", type(e).__name__, e)
            return 0
        with self._lock:
            self._scalars.update(loaded)
        logger.info("✅ Kernel cache loaded (%d scalars).", len(loaded))
        return len(loaded)


kernel_cache = KernelCache()


def get_cache_info(cache: Optional[KernelCache] = None) -> dict:
    """Get information about the kernel cache for logging."""
    return (cache or kernel_cache).info()
