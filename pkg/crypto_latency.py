"""
Cost model for the ciphers a ground user can pick: DES, AES and RSA.

Only the cost of encrypting is modelled, nothing is ever encrypted. Choosing a
key length fixes the algorithm because the key sets do not overlap:

    DES  N = 64                      block 64 bits,  16 rounds
    AES  N = 128 / 192 / 256         block 128 bits, 10 / 12 / 14 rounds
    RSA  N = 1024 / 2048 / 3072 / 4096  block N bits (1 nominal round)

Per-block cycle counts use the primitive-operation costs N_and, N_or, N_shift and
N_xor (all 1 cycle unless configured otherwise). Blocks are processed
independently (ECB), so the cost of a payload is the per-block cost times the
block count, with a partial trailing block counted as a whole one.

RSA uses a block as large as its key, so with a per-block cost of N^2 the cost
per payload bit grows linearly with N. That is modelled as stated, without
padding schemes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Tuple

DES_KEY_LENGTHS: Tuple[int, ...] = (64,)
AES_KEY_LENGTHS: Tuple[int, ...] = (128, 192, 256)
RSA_KEY_LENGTHS: Tuple[int, ...] = (1024, 2048, 3072, 4096)
KEY_LENGTHS: Tuple[int, ...] = DES_KEY_LENGTHS + AES_KEY_LENGTHS + RSA_KEY_LENGTHS

SECURITY_MIN = math.log2(min(KEY_LENGTHS))
SECURITY_MAX = math.log2(max(KEY_LENGTHS))

DES_ROUNDS = 16
DES_BLOCK_BITS = 64
AES_BLOCK_BITS = 128
AES_ROUNDS: Dict[int, int] = {128: 10, 192: 12, 256: 14}
RSA_NOMINAL_ROUNDS = 1

# Security level is log2 of the key length, a plain float in [6, 12].
SecurityLevel = float


class InvalidKeyLengthError(ValueError):
    def __init__(self, key_length: object) -> None:
        super().__init__(
            f"Key length {key_length!r} is not one of {', '.join(str(n) for n in KEY_LENGTHS)}"
        )
        self.key_length = key_length


class Algorithm(str, Enum):
    DES = "DES"
    AES = "AES"
    RSA = "RSA"


class Direction(str, Enum):
    ENCRYPT = "encrypt"
    DECRYPT = "decrypt"


@dataclass(frozen=True)
class CycleCosts:
    n_and: float = 1.0
    n_or: float = 1.0
    n_shift: float = 1.0
    n_xor: float = 1.0

    def __post_init__(self) -> None:
        for name in ("n_and", "n_or", "n_shift", "n_xor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"Cycle cost {name} must be positive")


UNIT_CYCLE_COSTS = CycleCosts()


def _expected_shape(algorithm: Algorithm, key_length: int) -> Tuple[int, int]:
    if algorithm is Algorithm.DES and key_length in DES_KEY_LENGTHS:
        return DES_BLOCK_BITS, DES_ROUNDS
    if algorithm is Algorithm.AES and key_length in AES_KEY_LENGTHS:
        return AES_BLOCK_BITS, AES_ROUNDS[key_length]
    if algorithm is Algorithm.RSA and key_length in RSA_KEY_LENGTHS:
        return key_length, RSA_NOMINAL_ROUNDS
    raise InvalidKeyLengthError(key_length)


@dataclass(frozen=True)
class CipherSuite:
    algorithm: Algorithm
    key_length: int
    block_size: int
    rounds: int
    cycle_costs: CycleCosts = UNIT_CYCLE_COSTS

    def __post_init__(self) -> None:
        block_size, rounds = _expected_shape(self.algorithm, self.key_length)
        if (self.block_size, self.rounds) != (block_size, rounds):
            raise ValueError(
                f"{self.algorithm.value}-{self.key_length} requires block size {block_size} "
                f"and {rounds} rounds, got {self.block_size} and {self.rounds}"
            )

    @property
    def name(self) -> str:
        return f"{self.algorithm.value}-{self.key_length}"


def suite_from_key_length(key_length: int, cycle_costs: CycleCosts = UNIT_CYCLE_COSTS) -> CipherSuite:
    if isinstance(key_length, bool) or key_length not in KEY_LENGTHS:
        raise InvalidKeyLengthError(key_length)
    key_length = int(key_length)
    if key_length in DES_KEY_LENGTHS:
        algorithm = Algorithm.DES
    elif key_length in AES_KEY_LENGTHS:
        algorithm = Algorithm.AES
    else:
        algorithm = Algorithm.RSA
    block_size, rounds = _expected_shape(algorithm, key_length)
    return CipherSuite(algorithm, key_length, block_size, rounds, cycle_costs)


def complexity(suite: CipherSuite, direction: Direction = Direction.ENCRYPT) -> float:
    """Cycles needed for one block in the given direction."""
    direction = Direction(direction)
    c = suite.cycle_costs
    if suite.algorithm is Algorithm.DES:
        return 16 * c.n_shift + suite.rounds * (10 * c.n_shift + 10 * c.n_xor)
    if suite.algorithm is Algorithm.AES:
        final_round = 16 * c.n_xor + 12 * c.n_shift + 12 * c.n_or
        if direction is Direction.ENCRYPT:
            middle = 184 * c.n_and + 136 * c.n_or + 352 * c.n_shift
        else:
            middle = 644 * c.n_and + 500 * c.n_or + 224 * c.n_shift
        return 16 * c.n_xor + (suite.rounds - 1) * middle + final_round
    return float(suite.key_length) ** 2


def block_count(suite: CipherSuite, data_size: float) -> int:
    return int(math.ceil(data_size / suite.block_size))


def _latency(suite: CipherSuite, data_size: float, clock: float, direction: Direction) -> float:
    if not data_size > 0:
        raise ValueError(f"Data size must be positive, got {data_size}")
    if not clock > 0:
        raise ValueError(f"Clock must be positive, got {clock}")
    return complexity(suite, direction) * block_count(suite, data_size) / clock


def encryption_latency(suite: CipherSuite, data_size: float, clock: float) -> float:
    """Seconds the ground user spends encrypting data_size bits at clock Hz."""
    return _latency(suite, data_size, clock, Direction.ENCRYPT)


def decryption_latency(suite: CipherSuite, data_size: float, clock: float) -> float:
    """Seconds the radio unit spends decrypting data_size bits at clock Hz."""
    return _latency(suite, data_size, clock, Direction.DECRYPT)


def security_level(key_length: int) -> SecurityLevel:
    if isinstance(key_length, bool) or key_length not in KEY_LENGTHS:
        raise InvalidKeyLengthError(key_length)
    return math.log2(key_length)


def weakest_sufficient_key(requirement: float) -> int:
    """Smallest supported key length whose security level meets the requirement."""
    for key_length in KEY_LENGTHS:
        if math.log2(key_length) >= requirement:
            return key_length
    return KEY_LENGTHS[-1]
