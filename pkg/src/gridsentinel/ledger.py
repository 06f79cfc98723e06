"""Emulated smart contract holding the fixed-point regional ratios.

Storage mirrors the on-chain layout: a precision factor ``D``, the region
count and two unsigned arrays (``aOPs`` for floor(D x_i), ``bOa`` for
floor(D y_i)). Writes are queued and only become visible when a block is
sealed. Python integers stand in for uint256; note that prod(aOPs) reaches
D**n, which overflows 256 bits for n >= 13 at D = 10**6.
"""
from __future__ import annotations

import math
import numbers
import threading
from dataclasses import dataclass, field

from .errors import ConfigurationError, IncompleteRoundError

TX_LOG_HEADER = "block,epoch,region,Dx,Dy"


@dataclass(frozen=True)
class Transaction:
    region_id: int
    payload: tuple
    epoch: int
    kind: str = "updateData"
    seq: int = 0
    valid: bool = True
    reason: str = ""


@dataclass(eq=False)
class ContractState:
    D: int
    n: int
    aOPs: list = field(default_factory=list)
    bOa: list = field(default_factory=list)
    pending: list = field(default_factory=list)
    block_height: int = 0
    block_interval: float = 1.0
    clock: float = 0.0
    rejected: list = field(default_factory=list)
    applied_log: list = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _seq: int = 0


def deploy(D, n, block_interval=1.0):
    if int(D) != D or D < 10:
        raise ConfigurationError("precision factor D must be an integer >= 10")
    if int(n) != n or n < 1:
        raise ConfigurationError("region count n must be a positive integer")
    return ContractState(D=int(D), n=int(n), aOPs=[None] * int(n), bOa=[None] * int(n), block_interval=block_interval)


def to_fixed(value, D):
    """Front-end conversion floor(D * value) to an unsigned integer."""
    if value < 0:
        raise ValueError("contract values are unsigned")
    return int(math.floor(D * value))


def update_data(state, region_id, Dx, Dy, epoch=None):
    """Queue an updateData transaction; invalid ones are kept but flagged."""
    epoch = state.block_height if epoch is None else int(epoch)
    reason = ""
    if not (isinstance(region_id, numbers.Integral) and 1 <= region_id <= state.n):
        reason = f"region {region_id} outside [1, {state.n}]"
    elif not (isinstance(Dx, numbers.Integral) and isinstance(Dy, numbers.Integral)) or Dx < 0 or Dy < 0:
        reason = "payload must be unsigned integers"
    elif Dx > state.D:
        reason = f"Dx={Dx} exceeds D={state.D}"
    if not reason:
        region_id, Dx, Dy = int(region_id), int(Dx), int(Dy)
    with state._lock:
        tx = Transaction(region_id, (Dx, Dy), epoch, seq=state._seq, valid=not reason, reason=reason)
        state._seq += 1
        state.pending.append(tx)
    return tx


def seal_block(state):
    """Apply the queue in (epoch, region, submission) order and advance the chain."""
    with state._lock:
        queue, state.pending = state.pending, []
    state.block_height += 1
    for tx in sorted(queue, key=lambda t: (t.epoch, t.region_id if t.valid else -1, t.seq)):
        if not tx.valid:
            state.rejected.append((state.block_height, tx))
            continue
        i = tx.region_id - 1
        state.aOPs[i], state.bOa[i] = tx.payload
        state.applied_log.append((state.block_height, tx.epoch, tx.region_id, *tx.payload))
    state.clock += state.block_interval
    return state.block_height


def aggregate_values(state):
    """Exact integer product of aOPs (scale D**n) and sum of bOa (scale D)."""
    missing = [i + 1 for i, v in enumerate(state.aOPs) if v is None]
    if missing:
        raise IncompleteRoundError(missing)
    x_b = 1
    for v in state.aOPs:
        x_b *= v
    return x_b, sum(state.bOa)


def final_probability(x_b, y_b, D, n):
    """x_b (D + y_b) / D**(n+1), rounded once to float and clipped to [0, 1]."""
    p = (x_b * (D + y_b)) / D ** (n + 1)
    return min(max(p, 0.0), 1.0)


def write_tx_log(state, path):
    lines = [TX_LOG_HEADER] + [",".join(str(v) for v in row) for row in state.applied_log]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
