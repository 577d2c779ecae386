"""Space-filling curve codecs for serializing quantized 3D cells.

Morton (Z-order) interleaves coordinate bits directly. The Hilbert codec
follows Skilling's transpose construction (gray-code travel with per-level
exchange/invert fixups), which gives the conventional curve: index 0 at the
origin and consecutive indices on face-adjacent cells.
"""

from __future__ import annotations

MAX_BITS = 21  # 3*21 = 63 index bits, still fits a signed int64


def _check_cell(x: int, y: int, z: int, bits: int) -> None:
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"bits must be in [1, {MAX_BITS}], got {bits}")
    lim = 1 << bits
    for name, v in (("x", x), ("y", y), ("z", z)):
        if not 0 <= v < lim:
            raise ValueError(
                f"coordinate {name}={v} out of range [0, {lim}) for bits={bits}")


def morton_encode(x: int, y: int, z: int, bits: int) -> int:
    """Interleave bits: bit j of x -> output bit 3j, y -> 3j+1, z -> 3j+2."""
    _check_cell(x, y, z, bits)
    out = 0
    for j in range(bits):
        out |= ((x >> j) & 1) << (3 * j)
        out |= ((y >> j) & 1) << (3 * j + 1)
        out |= ((z >> j) & 1) << (3 * j + 2)
    return out


def morton_decode(index: int, bits: int) -> tuple[int, int, int]:
    """Inverse of :func:`morton_encode`."""
    if not 0 <= index < 1 << (3 * bits):
        raise ValueError(f"index {index} out of range for bits={bits}")
    x = y = z = 0
    for j in range(bits):
        x |= ((index >> (3 * j)) & 1) << j
        y |= ((index >> (3 * j + 1)) & 1) << j
        z |= ((index >> (3 * j + 2)) & 1) << j
    return x, y, z


def _axes_to_transpose(coords: list[int], bits: int) -> list[int]:
    x = list(coords)
    n = len(x)
    q = 1 << (bits - 1)
    while q > 1:
        p = q - 1
        for i in range(n):
            if x[i] & q:
                x[0] ^= p
            else:
                t = (x[0] ^ x[i]) & p
                x[0] ^= t
                x[i] ^= t
        q >>= 1
    for i in range(1, n):
        x[i] ^= x[i - 1]
    t = 0
    q = 1 << (bits - 1)
    while q > 1:
        if x[n - 1] & q:
            t ^= q - 1
        q >>= 1
    return [v ^ t for v in x]


def _transpose_to_axes(trans: list[int], bits: int) -> list[int]:
    x = list(trans)
    n = len(x)
    t = x[n - 1] >> 1
    for i in range(n - 1, 0, -1):
        x[i] ^= x[i - 1]
    x[0] ^= t
    q = 2
    while q != (1 << bits):
        p = q - 1
        for i in range(n - 1, -1, -1):
            if x[i] & q:
                x[0] ^= p
            else:
                t = (x[0] ^ x[i]) & p
                x[0] ^= t
                x[i] ^= t
        q <<= 1
    return x


def hilbert_encode(x: int, y: int, z: int, bits: int) -> int:
    """3D Hilbert index of a grid cell; origin maps to 0."""
    _check_cell(x, y, z, bits)
    tr = _axes_to_transpose([x, y, z], bits)
    # transpose word 0 carries the most significant bit of each 3-bit group
    out = 0
    for lvl in range(bits - 1, -1, -1):
        for w in tr:
            out = (out << 1) | ((w >> lvl) & 1)
    return out


def hilbert_decode(index: int, bits: int) -> tuple[int, int, int]:
    """Inverse of :func:`hilbert_encode`."""
    if not 0 <= index < 1 << (3 * bits):
        raise ValueError(f"index {index} out of range for bits={bits}")
    tr = [0, 0, 0]
    pos = 3 * bits - 1
    for lvl in range(bits - 1, -1, -1):
        for i in range(3):
            tr[i] |= ((index >> pos) & 1) << lvl
            pos -= 1
    x, y, z = _transpose_to_axes(tr, bits)
    return x, y, z
