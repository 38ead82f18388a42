"""Deterministic CPU operation generators bound to cores.

Two program shapes: the victim array workload (store an alternating 1/0
pattern across an array, one element per line, then read it all back and sum)
and a seeded random load/store stress generator for invariant suites.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .protocol import CpuOp, NodeId, OpKind


def encode_value(value: int, line_size: int) -> bytes:
    """Render a small integer as a full line (little-endian, zero padded)."""
    return value.to_bytes(line_size, "little")


def decode_value(line: bytes) -> int:
    return int.from_bytes(line, "little")


@dataclass
class WorkloadBinding:
    """A program attached to one core.

    Ops issue in order, one outstanding at a time; the engine fills
    ``results`` with the value observed by each completed load, keyed by the
    op's position in the program.  ``start`` delays the first issue, which
    lets scenarios sequence cores deterministically.  ``kind``/``base``/``n``
    are generator metadata used by report rendering.
    """

    core: NodeId
    program: list[CpuOp]
    results: dict[int, int] = field(default_factory=dict)
    start: int = 0
    kind: str = "custom"
    base: int = 0
    n: int = 0

    def load_sum(self) -> int:
        return sum(self.results.values())


def victim_array_workload(
    base: int, n: int, core: NodeId, line_size: int = 8, start: int = 0
) -> WorkloadBinding:
    """The measured victim program: store 1,0,1,0,... across n lines, then
    load them all back.  Element i lives at base + i*line_size."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if base % line_size != 0:
        raise ValueError("base must be line-aligned")
    program: list[CpuOp] = []
    for i in range(n):
        value = 1 if i % 2 == 0 else 0
        program.append(
            CpuOp(OpKind.STORE, base + i * line_size, encode_value(value, line_size))
        )
    for i in range(n):
        program.append(CpuOp(OpKind.LOAD, base + i * line_size))
    return WorkloadBinding(
        core=core, program=program, start=start, kind="victim_array", base=base, n=n
    )


def reader_workload(
    base: int, n: int, core: NodeId, line_size: int = 8, start: int = 0
) -> WorkloadBinding:
    """Load-only sweep over n lines; stages a core as a clean sharer/owner."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if base % line_size != 0:
        raise ValueError("base must be line-aligned")
    program = [CpuOp(OpKind.LOAD, base + i * line_size) for i in range(n)]
    return WorkloadBinding(
        core=core, program=program, start=start, kind="reader", base=base, n=n
    )


def random_workload(
    seed: int,
    core: NodeId,
    address_pool: list[int],
    ops: int,
    line_size: int = 8,
    start: int = 0,
) -> WorkloadBinding:
    """Seeded uniform load/store mix over a fixed address pool.

    50% loads, 50% stores of a PRNG byte value; identical (seed, pool, ops)
    always yields the identical program.
    """
    if not address_pool and ops > 0:
        raise ValueError("address pool must be non-empty")
    rng = random.Random(seed)
    program: list[CpuOp] = []
    for _ in range(ops):
        addr = rng.choice(address_pool)
        if rng.random() < 0.5:
            program.append(CpuOp(OpKind.LOAD, addr))
        else:
            value = rng.randrange(256)
            program.append(
                CpuOp(OpKind.STORE, addr, encode_value(value, line_size))
            )
    return WorkloadBinding(core=core, program=program, start=start, kind="random")
