"""Named parameter storage shared by the tokenizer, encoder and trainer.

A ParamStore is an ordered name -> ndarray mapping. Buffers (batch-norm
running statistics) live alongside trainable tensors but are excluded from
gradient bookkeeping and optimizer updates.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class ParamStore:
    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}
        self._buffers: set[str] = set()

    def add(self, name: str, array: np.ndarray, buffer: bool = False) -> None:
        if name in self._arrays:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._arrays[name] = np.asarray(array)
        if buffer:
            self._buffers.add(name)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, array: np.ndarray) -> None:
        if name not in self._arrays:
            raise KeyError(name)
        self._arrays[name] = array

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def is_buffer(self, name: str) -> bool:
        return name in self._buffers

    def trainable_names(self) -> list[str]:
        return [n for n in self._arrays if n not in self._buffers]

    def wrap(self) -> dict[str, Tensor | np.ndarray]:
        """Tape leaves for trainable tensors; buffers stay plain constants."""
        return {n: (a if n in self._buffers else Tensor(a))
                for n, a in self._arrays.items()}

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for n, a in self._arrays.items():
            out.add(n, a.astype(dtype), buffer=n in self._buffers)
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n, a in self._arrays.items():
            out.add(n, a.copy(), buffer=n in self._buffers)
        return out


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                 dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated to +/- 2 std by resampling."""
    out = rng.normal(0.0, std, size=shape)
    while True:
        mask = np.abs(out) > 2.0 * std
        if not mask.any():
            break
        out[mask] = rng.normal(0.0, std, size=int(mask.sum()))
    return out.astype(dtype)
