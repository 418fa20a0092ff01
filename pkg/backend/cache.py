import logging
import time
from functools import wraps

try:
    from backend.settings import RATE_CACHE_SIZE, RATE_CACHE_TTL
except ImportError:
    from .settings import RATE_CACHE_SIZE, RATE_CACHE_TTL

logger = logging.getLogger(__name__)


class TTLCache:
    def __init__(self, ttl_seconds=300, max_entries=100_000):
        self.ttl = ttl_seconds
        self.max_entries = max_entries
        self.cache = {}
        self.hits = 0
        self.misses = 0

    def get(self, key):
        if key in self.cache:
            val, timestamp = self.cache[key]
            if time.time() - timestamp < self.ttl:
                self.hits += 1
                return val
            del self.cache[key]
        self.misses += 1
        return None

    def set(self, key, value):
        now = time.time()
        self.cache.pop(key, None)
        if len(self.cache) >= self.max_entries:
            self.purge(now)
            # still full: evict the oldest insertions
            while len(self.cache) >= self.max_entries:
                del self.cache[next(iter(self.cache))]
        self.cache[key] = (value, now)

    def purge(self, now=None):
        now = time.time() if now is None else now
        expired = [k for k, (_, ts) in self.cache.items() if now - ts >= self.ttl]
        for k in expired:
            del self.cache[k]
        return len(expired)

    def clear(self):
        self.cache = {}
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self.cache)


# Bits per resource block keyed by (distance, direction, radio params)
rate_cache = TTLCache(ttl_seconds=RATE_CACHE_TTL, max_entries=RATE_CACHE_SIZE)


def cache_result(cache_obj):
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            # Arguments are frozen dataclasses and floats, so repr is a stable key
            key = func.__qualname__ + str(args) + str(sorted(kwargs.items()))

            cached_val = cache_obj.get(key)
            if cached_val is not None:
                return cached_val

            result = func(*args, **kwargs)
            cache_obj.set(key, result)
            return result
        return wrapper
    return decorator


def clear_all_caches():
    rate_cache.clear()
    logger.debug("rate cache cleared")
