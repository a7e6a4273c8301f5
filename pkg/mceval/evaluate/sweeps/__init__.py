from .recursive import RecursiveSweep
from .static import StaticSweep
from .sweep import Sweep

SWEEP_ALIASES = {
    "recursive": [
        "recursive",
        "rec",
        "backward",
    ],
    "static": [
        "static",
        "oneshot",
        "one-shot",
    ],
}


def resolve_sweep(name: str) -> type[Sweep]:
    """
    The sweep class named by `name` or one of its aliases.

    Raises:
        NameError: if the name is not recognised.
    """
    if name in SWEEP_ALIASES["recursive"]:
        return RecursiveSweep
    if name in SWEEP_ALIASES["static"]:
        return StaticSweep
    raise NameError(f"The sweep '{name}' is not recognised. Please use one from {list(SWEEP_ALIASES)}")
