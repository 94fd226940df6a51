"""Random binary spreading and the synchronous AWGN multiple-access channel.

Each of K users spreads every symbol over the same N unit-energy chips drawn
once per word, so a whole word of L symbols shares one N x K chip matrix.
The receiver sees the chip-rate superposition of all users plus white
Gaussian noise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

FIXTURE_MAGIC = b"CDMAFIX\x00"
FIXTURE_VERSION = 1


class SpreadingMatrix:
    """N x K matrix of +-1 chips with its cached code correlation matrix.

    corr[k, j] = (1/N) sum_mu chips[mu, k] * chips[mu, j]; unit diagonal by
    construction. corr is the O(K^2) operand of the iterative detector, so it
    is computed once here.
    """

    __slots__ = ("chips", "corr")

    def __init__(self, chips):
        c = np.asarray(chips)
        if c.ndim != 2:
            raise ValueError(f"chips must be 2-d, got shape {c.shape}")
        if not np.all(np.abs(c) == 1):
            raise ValueError("chips must all be +-1")
        c = c.astype(np.int8, copy=True)
        c.flags.writeable = False
        self.chips = c
        w = (c.astype(np.float64).T @ c.astype(np.float64)) / c.shape[0]
        w.flags.writeable = False
        self.corr = w

    @property
    def spread_factor(self) -> int:
        return self.chips.shape[0]

    @property
    def n_users(self) -> int:
        return self.chips.shape[1]


@dataclass(frozen=True)
class ChannelConfig:
    """Static channel parameters; load is the user-per-chip ratio K/N."""

    spread_factor: int
    n_users: int
    sigma: float

    def __post_init__(self):
        if self.spread_factor < 1 or self.n_users < 1:
            raise ValueError("spread_factor and n_users must be >= 1")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def load(self) -> float:
        return self.n_users / self.spread_factor


def generate_spreading(spread_factor: int, n_users: int,
                       rng: np.random.Generator) -> SpreadingMatrix:
    """Draw independent fair +-1 chips for every (chip, user) slot."""
    if spread_factor < 1 or n_users < 1:
        raise ValueError("spread_factor and n_users must be >= 1")
    chips = rng.integers(0, 2, size=(spread_factor, n_users), dtype=np.int8) * 2 - 1
    return SpreadingMatrix(chips)


def transmit(spreading: SpreadingMatrix, block: np.ndarray, sigma: float,
             rng: np.random.Generator) -> np.ndarray:
    """Received N x L samples: (1/sqrt(N)) * chips @ block plus N(0, sigma^2) noise.

    The 1/sqrt(N) factor keeps each user's per-symbol energy at 1 regardless
    of the spreading factor. Noise is independent across chips and symbol
    slots; sigma = 0 is exact and deterministic.
    """
    b = np.asarray(block)
    if b.ndim != 2 or b.shape[0] != spreading.n_users:
        raise ValueError(
            f"block shape {b.shape} incompatible with {spreading.n_users} users")
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    n = spreading.spread_factor
    signal = (spreading.chips.astype(np.float64) @ b.astype(np.float64)) / np.sqrt(n)
    if sigma == 0.0:
        return signal
    return signal + sigma * rng.standard_normal(signal.shape)


def save_fixture(path, spreading: SpreadingMatrix, samples: np.ndarray,
                 sigma: float, seed: int) -> None:
    """Dump (chips, received samples) to a small versioned binary file.

    Layout: magic, uint32 version, uint32 N, K, L, float64 sigma,
    uint64 seed, then row-major int8 chips and float64 samples.
    """
    y = np.ascontiguousarray(samples, dtype=np.float64)
    if y.shape[0] != spreading.spread_factor:
        raise ValueError("samples row count must equal the spreading factor")
    header = struct.pack(
        "<8sIIIIdQ", FIXTURE_MAGIC, FIXTURE_VERSION,
        spreading.spread_factor, spreading.n_users, y.shape[1],
        float(sigma), seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(spreading.chips).tobytes())
        fh.write(y.tobytes())


def load_fixture(path):
    """Read a fixture written by save_fixture.

    Returns (spreading, samples, sigma, seed); rejects bad magic, unknown
    versions, and truncated payloads.
    """
    header_size = struct.calcsize("<8sIIIIdQ")
    with open(path, "rb") as fh:
        header = fh.read(header_size)
        if len(header) != header_size:
            raise ValueError("fixture file truncated in header")
        magic, version, n, k, l, sigma, seed = struct.unpack("<8sIIIIdQ", header)
        if magic != FIXTURE_MAGIC:
            raise ValueError("not a channel fixture file")
        if version != FIXTURE_VERSION:
            raise ValueError(f"unsupported fixture version {version}")
        chip_bytes = fh.read(n * k)
        sample_bytes = fh.read(n * l * 8)
        if len(chip_bytes) != n * k or len(sample_bytes) != n * l * 8:
            raise ValueError("fixture file truncated in payload")
    chips = np.frombuffer(chip_bytes, dtype=np.int8).reshape(n, k)
    samples = np.frombuffer(sample_bytes, dtype=np.float64).reshape(n, l)
    return SpreadingMatrix(chips), samples, sigma, seed
