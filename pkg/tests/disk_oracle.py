"""Separation-of-variables solution for a point source in a sound-soft disk."""

import numpy as np
from scipy import special


def disk_scattered(points, source, k, radius, n_max=None):
    """Scattered field of ``(i/4) H0(k|x - z|)`` inside a centered disk."""
    points = np.atleast_2d(points)
    source = np.asarray(source, dtype=float)
    r = np.linalg.norm(points, axis=1)
    th = np.arctan2(points[:, 1], points[:, 0])
    rz = np.linalg.norm(source)
    tz = np.arctan2(source[1], source[0])
    if n_max is None:
        n_max = int(k * radius) + 60
    out = np.zeros(len(points), dtype=complex)
    for n in range(-n_max, n_max + 1):
        coef = special.hankel1(n, k * radius) * special.jv(n, k * rz) / special.jv(n, k * radius)
        out += coef * special.jv(n, k * r) * np.exp(1j * n * (th - tz))
    return -0.25j * out
