import os

from .errors import InvalidArgumentError


def worker_count():
    """Worker threads to use; ``KDM_HELIO_THREADS`` caps it, otherwise the CPU count."""
    env = os.environ.get("KDM_HELIO_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise InvalidArgumentError(f"KDM_HELIO_THREADS must be an integer, got {env!r}") from None
        return max(1, n)
    return os.cpu_count() or 1
