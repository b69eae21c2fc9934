"""Named sub-generators derived from a single experiment seed."""

import zlib

import numpy as np
import torch


def derive_seed(seed: int, name: str, *keys: int) -> int:
    """Stable 63-bit seed for the stream ``name`` (plus optional integer keys)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()), *keys))
    hi, lo = (int(v) for v in ss.generate_state(2, dtype=np.uint32))
    return ((hi << 32) | lo) & ((1 << 63) - 1)


def derive_rng(seed: int, name: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, name, *keys))


def derive_torch_generator(seed: int, name: str, *keys: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(derive_seed(seed, name, *keys))
    return g
