"""Byte-oriented renormalizing range coder over frozen frequency tables.

64-bit state variant: the encoder keeps an interval [low, low + range)
and narrows it per symbol proportionally to the symbol's 16-bit
frequency; whenever the top byte of the interval is pinned (or the
range underflows below 2^48) a byte is emitted and the state shifts.
The decoder mirrors the exact same state transitions, so the byte
streams stay in lockstep and decode(encode(s)) is the identity for any
symbols representable in the table.
"""

from __future__ import annotations

from bisect import bisect_right

import numpy as np

from .bottleneck import CdfTable, TABLE_TOTAL
from .errors import DecodeError, EncodeError, InputError

_PRECISION = 64
_TOP = 1 << (_PRECISION - 8)
_BOTTOM = 1 << (_PRECISION - 16)
_MASK = (1 << _PRECISION) - 1
_FLUSH_BYTES = _PRECISION // 8


def _as_channel_major(symbols: np.ndarray, channels: int) -> np.ndarray:
    arr = np.asarray(symbols)
    if not np.issubdtype(arr.dtype, np.integer):
        raise InputError("symbols must be integers")
    if arr.ndim < 2 or arr.shape[0] != channels:
        raise InputError(
            f"symbols must have a leading channel axis of size {channels}")
    return arr.reshape(channels, -1)


def rc_encode(symbols: np.ndarray, table: CdfTable) -> bytes:
    """Encode a channel-major integer tensor into a payload.

    Symbols are coded channel 0 first, then channel 1, and so on. An
    empty tensor encodes to an empty payload. Symbols outside a
    channel's table range raise EncodeError naming the channel.
    """
    sym2 = _as_channel_major(symbols, table.channels)
    if sym2.size == 0:
        return b""
    out = bytearray()
    low = 0
    rng = _MASK
    for c in range(table.channels):
        cum = table.cum_lists[c]
        min_v = int(table.min_values[c])
        n_sym = len(cum) - 1
        for s in sym2[c].tolist():
            idx = s - min_v
            if idx < 0 or idx >= n_sym:
                raise EncodeError(
                    f"symbol {s} outside table range [{min_v}, "
                    f"{min_v + n_sym - 1}] for channel {c}")
            r = rng >> 16
            low += cum[idx] * r
            rng = (cum[idx + 1] - cum[idx]) * r
            while True:
                if (low ^ (low + rng)) < _TOP:
                    pass
                elif rng < _BOTTOM:
                    rng = (_MASK + 1 - low) & (_BOTTOM - 1)
                else:
                    break
                out.append((low >> (_PRECISION - 8)) & 0xFF)
                low = (low << 8) & _MASK
                rng <<= 8
    for _ in range(_FLUSH_BYTES):
        out.append((low >> (_PRECISION - 8)) & 0xFF)
        low = (low << 8) & _MASK
    return bytes(out)


def rc_decode(payload: bytes, table: CdfTable, count: int) -> np.ndarray:
    """Decode ``count`` symbols laid out channel-major.

    ``count`` must divide evenly across the table's channels; the result
    has shape [channels, count // channels]. A payload that runs out of
    bytes before the final state is resolved raises DecodeError.
    """
    channels = table.channels
    if count < 0:
        raise InputError("count must be non-negative")
    if count == 0:
        return np.zeros((channels, 0), dtype=np.int64)
    if count % channels:
        raise InputError(
            f"count {count} does not divide across {channels} channels")
    per = count // channels
    pos = 0

    def next_byte() -> int:
        nonlocal pos
        if pos >= len(payload):
            raise DecodeError("truncated payload")
        b = payload[pos]
        pos += 1
        return b

    state = 0
    for _ in range(_FLUSH_BYTES):
        state = (state << 8) | next_byte()
    low = 0
    rng = _MASK
    out = np.empty((channels, per), dtype=np.int64)
    for c in range(channels):
        cum = table.cum_lists[c]
        min_v = int(table.min_values[c])
        for i in range(per):
            r = rng >> 16
            target = (state - low) // r
            if target >= TABLE_TOTAL:
                target = TABLE_TOTAL - 1
            idx = bisect_right(cum, target) - 1
            out[c, i] = idx + min_v
            low += cum[idx] * r
            rng = (cum[idx + 1] - cum[idx]) * r
            while True:
                if (low ^ (low + rng)) < _TOP:
                    pass
                elif rng < _BOTTOM:
                    rng = (_MASK + 1 - low) & (_BOTTOM - 1)
                else:
                    break
                state = ((state << 8) | next_byte()) & _MASK
                low = (low << 8) & _MASK
                rng <<= 8
    return out
