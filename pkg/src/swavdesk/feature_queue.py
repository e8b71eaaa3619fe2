"""FIFO of past projected features used to enlarge small assignment problems."""
from __future__ import annotations

import numpy as np

from .numerics import ShapeError


class FeatureQueue:
    """Ring buffer of unit-norm feature rows.

    Rows are kept newest-first when read back through :meth:`contents`.
    """

    def __init__(self, dim: int, capacity: int = 3840, start_epoch: int = 15):
        self.dim = int(dim)
        self.capacity = int(capacity)
        self.start_epoch = int(start_epoch)
        self._buf = np.zeros((self.capacity, self.dim))
        self._head = 0  # next write slot
        self.current_len = 0

    def __len__(self) -> int:
        return self.current_len

    def enabled(self, epoch: int) -> bool:
        return self.capacity > 0 and epoch >= self.start_epoch

    def contents(self) -> np.ndarray:
        """Stored rows ordered newest to oldest."""
        if not self.current_len:
            return np.zeros((0, self.dim))
        idx = (self._head - 1 - np.arange(self.current_len)) % self.capacity
        return self._buf[idx].copy()

    def assemble(self, z_batch) -> tuple[np.ndarray, int]:
        z = np.asarray(z_batch, dtype=np.float64)
        if z.shape[1] != self.dim:
            raise ShapeError(f"batch dim {z.shape[1]} does not match queue dim {self.dim}")
        if not self.current_len:
            return z.copy(), z.shape[0]
        return np.concatenate([z, self.contents()], axis=0), z.shape[0]

    def push_batch(self, z_batch) -> "FeatureQueue":
        z = np.asarray(z_batch, dtype=np.float64)
        if z.size and z.shape[1] != self.dim:
            raise ShapeError(f"batch dim {z.shape[1]} does not match queue dim {self.dim}")
        if self.capacity == 0 or not z.size:
            return self
        z = z[-self.capacity:]
        idx = (self._head + np.arange(z.shape[0])) % self.capacity
        self._buf[idx] = z
        self._head = int((self._head + z.shape[0]) % self.capacity)
        self.current_len = min(self.capacity, self.current_len + z.shape[0])
        return self

    def state_arrays(self, prefix: str) -> dict:
        # oldest first so a reload can replay it through push_batch
        return {f"{prefix}.rows": self.contents()[::-1].copy()}

    def load_rows(self, rows) -> None:
        self._buf[:] = 0.0
        self._head = 0
        self.current_len = 0
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, self.dim)
        self.push_batch(rows)
