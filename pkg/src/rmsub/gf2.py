"""Bit-exact linear algebra over GF(2).

Matrices are dense 2-D numpy arrays of dtype uint8 with entries in {0, 1}.
The elimination routines pack each row into a Python integer (one bit per
column, column 0 as the most significant bit) so that a row operation is a
single wide XOR.  Inputs are never mutated.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "kronecker_power",
    "gf2_rank",
    "gf2_matmul",
    "de2bi",
    "gf2_solve",
    "pack_rows",
]


def _as_bits(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError("expected a non-empty 2-D matrix")
    a = a.astype(np.uint8, copy=False)
    if a.max() > 1:
        raise ValueError("matrix entries must be 0 or 1")
    return a


def pack_rows(a) -> list[int]:
    """Pack each row of a 0/1 matrix into an int, column 0 as the MSB."""
    a = _as_bits(a)
    pad = (-a.shape[1]) % 8
    packed = np.packbits(a, axis=1)
    return [int.from_bytes(row.tobytes(), "big") >> pad for row in packed]


def _eliminate(vectors) -> dict[int, int]:
    """Greedy elimination of packed rows; returns {pivot bit length: row}."""
    pivots: dict[int, int] = {}
    for v in vectors:
        while v:
            h = v.bit_length()
            b = pivots.get(h)
            if b is None:
                pivots[h] = v
                break
            v ^= b
    return pivots


def kronecker_power(base, m: int) -> np.ndarray:
    """m-th Kronecker power of a 2x2 binary matrix.

    m = 0 returns the 1x1 identity by convention.
    """
    base = _as_bits(base)
    if base.shape != (2, 2):
        raise ValueError("base must be 2x2")
    if m < 0:
        raise ValueError("m must be non-negative")
    out = np.array([[1]], dtype=np.uint8)
    for _ in range(m):
        out = np.kron(out, base)
    return out


def gf2_rank(a) -> int:
    """Rank of a 0/1 matrix over GF(2)."""
    return len(_eliminate(pack_rows(a)))


def gf2_matmul(a, b) -> np.ndarray:
    """Matrix product over GF(2)."""
    a = _as_bits(a)
    b = _as_bits(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return ((a.astype(np.int64) @ b.astype(np.int64)) & 1).astype(np.uint8)


def de2bi(lo: int, hi: int, width: int) -> np.ndarray:
    """Binary representations of the integers lo..hi as matrix rows.

    Row t is the width-bit representation of lo + t with the most
    significant bit in column 0.
    """
    if width < 1:
        raise ValueError("width must be positive")
    if not 0 <= lo <= hi:
        raise ValueError("need 0 <= lo <= hi")
    if hi >= (1 << width):
        raise ValueError(f"{hi} does not fit in {width} bits")
    vals = np.arange(lo, hi + 1, dtype=np.int64)
    shifts = np.arange(width - 1, -1, -1)
    return ((vals[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def gf2_solve(basis, target):
    """Solve u @ basis = target (mod 2) for the coefficient vector u.

    basis must have full row rank (ValueError otherwise).  Returns None
    when target is outside the row space of basis.
    """
    basis = _as_bits(basis)
    target = np.asarray(target).astype(np.uint8).reshape(-1)
    if target.shape[0] != basis.shape[1]:
        raise ValueError("target length must match basis column count")

    # Echelonize while tracking which original rows combine into each pivot.
    pivots: dict[int, tuple[int, int]] = {}
    for j, v in enumerate(pack_rows(basis)):
        combo = 1 << j
        while v:
            h = v.bit_length()
            if h not in pivots:
                pivots[h] = (v, combo)
                break
            bv, bc = pivots[h]
            v ^= bv
            combo ^= bc
        else:
            raise ValueError("basis rows are linearly dependent")

    t = pack_rows(target[None, :])[0]
    combo = 0
    while t:
        h = t.bit_length()
        if h not in pivots:
            return None
        bv, bc = pivots[h]
        t ^= bv
        combo ^= bc
    k = basis.shape[0]
    return np.array([(combo >> j) & 1 for j in range(k)], dtype=np.uint8)
