"""Superposition stack: a deterministic stack of vectors whose new contents
interpolate the pushed, unchanged and popped versions of the old stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

PUSH, NOOP, POP = 0, 1, 2


@dataclass
class SupStack:
    """Cells ordered top first, shape (batch, depth, m)."""

    cells: Tensor
    max_depth: int | None = None

    @property
    def depth(self) -> int:
        return self.cells.shape[1]

    @property
    def dim(self) -> int:
        return self.cells.shape[2]

    def reading(self) -> Tensor:
        if self.depth == 0:
            return self.cells.tape.constant(np.zeros((self.cells.shape[0], self.dim)))
        return self.cells[:, 0]


def empty_stack(tape: ad.Tape, batch: int, m: int, max_depth: int | None = None) -> SupStack:
    return SupStack(tape.constant(np.zeros((batch, 0, m))), max_depth)


def sup_step(s: SupStack, actions: Tensor, v: Tensor) -> tuple[SupStack, Tensor]:
    """Apply (push, no-op, pop) probabilities ``actions`` with push vector ``v``.

    Cells past the end of the stack read as zero vectors, so popping an empty
    or one-cell stack brings zeros to the top.
    """
    B, d, m = s.cells.shape
    if actions.shape != (B, 3):
        raise ShapeError(f"sup_step: actions {actions.shape} should be {(B, 3)}")
    if v.shape != (B, m):
        raise ShapeError(f"sup_step: push vector {v.shape} does not match cells {s.cells.shape}")
    tape = s.cells.tape
    z = tape.constant(np.zeros((B, 1, m)))
    pushed = ad.concatenate([v.reshape(B, 1, m), s.cells], axis=1)
    kept = ad.concatenate([s.cells, z], axis=1)
    if d >= 1:
        popped = ad.concatenate([s.cells[:, 1:], z, z], axis=1)
    else:
        popped = tape.constant(np.zeros((B, 1, m)))
    a = actions.reshape(B, 3, 1, 1)
    cells = a[:, PUSH] * pushed + a[:, NOOP] * kept + a[:, POP] * popped
    if s.max_depth is not None and cells.shape[1] > s.max_depth:
        cells = cells[:, :s.max_depth]
    new = SupStack(cells, s.max_depth)
    return new, new.reading()
