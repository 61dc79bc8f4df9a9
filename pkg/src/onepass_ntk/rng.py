"""Named, seedable random streams.

Every stream is identified by ``(seed, run_index, label)`` and derived from a
:class:`numpy.random.SeedSequence`, so streams for different labels or runs are
statistically independent and never share state.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

LABELS = ("init", "train", "eval", "audit", "target", "norm", "probe", "label")


def label_code(label: str) -> int:
    # crc32 keeps the code stable across interpreter runs (unlike hash()).
    return zlib.crc32(label.encode("utf-8"))


@dataclass(frozen=True)
class StreamId:
    seed: int
    run_index: int
    label: str

    def as_dict(self) -> dict:
        return {"seed": self.seed, "run_index": self.run_index, "label": self.label}


def stream(seed: int, label: str, run_index: int = 0) -> np.random.Generator:
    """Return a fresh generator for the named stream."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(run_index), label_code(label)))
    return np.random.Generator(np.random.PCG64(ss))


def streams(seed: int, run_index: int = 0, labels=LABELS) -> dict[str, np.random.Generator]:
    return {lab: stream(seed, lab, run_index) for lab in labels}
