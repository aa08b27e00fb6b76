import os

DEFAULT_MAX_LEVEL = 20


def max_level() -> int:
    """Largest dyadic level any construction may touch (``HFL_MAX_LEVEL`` overrides)."""
    raw = os.environ.get("HFL_MAX_LEVEL")
    if raw is None:
        return DEFAULT_MAX_LEVEL
    value = int(raw)
    if value < 0:
        raise ValueError(f"HFL_MAX_LEVEL must be nonnegative, got {value}")
    return value
