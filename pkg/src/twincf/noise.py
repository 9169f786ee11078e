"""Counter-based noise for simulators.

Every uniform variate is a pure function of ``(seed, stream_id, replicate_id,
component, domain)``. There is no generator state to advance, so a unit's
draws do not depend on which other units are simulated alongside it or in
what order, and batches can be evaluated in any split.

The mixing function is the SplitMix64 finalizer applied in a chain over the
key fields, evaluated on numpy ``uint64`` arrays.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO53 = float(2**53)

# Domain tags keep world generation, simulation and resampling streams apart
# even when the caller reuses a seed.
DOMAINS = {
    "world": 1,
    "covariate": 2,
    "assign": 3,
    "rct": 4,
    "sim": 5,
    "sim_independent": 6,
    "placebo": 7,
    "sensitivity": 8,
    "resample": 9,
}


def _mix(x: np.ndarray) -> np.ndarray:
    x = x + _GOLDEN
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


def _as_u64(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind == "u":
        return arr.astype(np.uint64)
    # Negative ints wrap; harmless for hashing.
    return np.ascontiguousarray(arr.astype(np.int64)).view(np.uint64).reshape(arr.shape)


def uniforms(
    seed: int,
    stream_ids,
    replicate_ids=0,
    component: int = 0,
    domain: str = "sim",
) -> np.ndarray:
    """Uniform(0, 1) variates keyed by broadcastable stream/replicate arrays.

    Values lie strictly inside the open interval, so inverse-CDF transforms
    never return infinities.
    """
    with np.errstate(over="ignore"):
        s = np.asarray(stream_ids)
        r = np.asarray(replicate_ids)
        s, r = np.broadcast_arrays(s, r)
        # Seed and domain are mixed in separate rounds; XOR-ing them together
        # first would let distinct (seed, domain) pairs share a stream.
        h = _mix(np.full(s.shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
        h = _mix(h ^ np.uint64(DOMAINS[domain]))
        h = _mix(h ^ _as_u64(s))
        h = _mix(h ^ _as_u64(r))
        h = _mix(h ^ np.uint64(component))
    return ((h >> _S11).astype(np.float64) + 0.5) / _TWO53


def stream_id(unit_id) -> int:
    """Stable 63-bit stream id for an opaque unit identifier."""
    digest = hashlib.blake2b(str(unit_id).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def stream_ids(unit_ids: Iterable) -> np.ndarray:
    return np.fromiter((stream_id(u) for u in unit_ids), dtype=np.int64)


@dataclass(frozen=True)
class NoiseRecord:
    """Key of one latent noise draw: identical keys reproduce identical draws."""

    seed: int
    stream_id: int
    replicate_id: int = 0

    def uniform(self, component: int = 0, domain: str = "sim") -> float:
        return float(uniforms(self.seed, self.stream_id, self.replicate_id, component, domain))

    def uniforms(self, k: int, domain: str = "sim") -> np.ndarray:
        return np.array([self.uniform(c, domain) for c in range(k)])


def derived_rng(seed: int, *keys: int) -> np.random.Generator:
    """Sequential generator for resampling work (bootstrap, permutations)."""
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32 & 0xFFFFFFFF, *keys]))
