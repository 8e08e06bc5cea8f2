"""Small shared helpers."""

import math


def fmt_float(x) -> str:
    """Fixed 6-significant-digit rendering for byte-stable CSV output."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"
