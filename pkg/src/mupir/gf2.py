"""GF(2) linear solver used as an independent decoding oracle.

Equations are XOR constraints over unknown blocks: a row is a bitmask over
unknown indices and a value block.  An unknown is decodable exactly when its
unit vector lies in the row space; the solver returns its value as the XOR
of the contributing equations' blocks.
"""
from __future__ import annotations

from .core import Block, xor_blocks


class GF2System:
    def __init__(self, block_bytes: int):
        self.block_bytes = block_bytes
        self._pivots = {}  # pivot column -> (mask, value)

    def add_equation(self, mask: int, value: Block) -> None:
        """Insert one XOR constraint; reduces against current pivot rows."""
        cur, val = mask, value
        while cur:
            reduced = False
            m = cur
            while m:
                low = m & -m
                col = low.bit_length() - 1
                m ^= low
                piv = self._pivots.get(col)
                if piv is not None:
                    cur ^= piv[0]
                    val = xor_blocks(val, piv[1])
                    reduced = True
                    break
            if not reduced:
                break
        if cur:
            col = (cur & -cur).bit_length() - 1
            self._pivots[col] = (cur, val)
            # keep rows mutually reduced so solvability is a local test
            for c, (pm, pv) in list(self._pivots.items()):
                if c != col and (pm >> col) & 1:
                    self._pivots[c] = (pm ^ cur, xor_blocks(pv, val))

    def solve(self, index: int):
        """Value of unknown `index` if it is determined, else None."""
        piv = self._pivots.get(index)
        if piv is None or piv[0] != (1 << index):
            return None
        return piv[1]
