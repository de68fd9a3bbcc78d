"""Small internal helpers shared across modules."""

from __future__ import annotations

import numpy as np


def readonly_array(a, dtype=float) -> np.ndarray:
    """Contiguous read-only copy; used to freeze dataclass fields."""
    a = np.ascontiguousarray(a, dtype=dtype)
    a.flags.writeable = False
    return a
