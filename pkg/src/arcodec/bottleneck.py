"""Factorized entropy bottleneck.

Each latent channel gets an independent learned cumulative distribution
built from a small chain of monotone stages; the probability of a
quantized value v is cdf(v + 0.5) - cdf(v - 0.5). Training adds uniform
noise in place of rounding; inference rounds half away from zero and the
learned distribution is frozen into a 16-bit integer frequency table for
range coding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, FreezeError, InputError, NumericError
from .model import ParameterStore, _acc

FILTERS = (3, 3, 3)
LIKELIHOOD_FLOOR = 1e-9
DEFAULT_TAIL_MASS = 1e-9
TABLE_TOTAL = 1 << 16
MAX_TABLE_SYMBOLS = 4096
_INIT_SCALE = 10.0
_CHAIN_WIDTHS = (1,) + FILTERS + (1,)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


class FactorizedEntropyModel:
    """Per-channel monotone CDF over latent values.

    A thin view over entropy arrays living in a ParameterStore under
    ``prefix``: matrices h{k} (softplus-reparameterized to be positive),
    biases b{k}, and gate factors a{k} (tanh-reparameterized to (-1, 1)),
    ending in a sigmoid. Monotonicity in the input is structural.
    """

    def __init__(self, channels: int, params: ParameterStore,
                 prefix: str = "ebm", tail_mass: float = DEFAULT_TAIL_MASS):
        if channels < 1:
            raise ConfigurationError("channels must be positive")
        if not 0.0 < tail_mass < 0.5:
            raise ConfigurationError("tail_mass must lie in (0, 0.5)")
        self.channels = channels
        self.params = params
        self.prefix = prefix
        self.tail_mass = tail_mass
        for name, shape in entropy_param_shapes(channels, prefix).items():
            if name not in params:
                raise ConfigurationError(f"missing entropy parameter {name!r}")
            if params[name].shape != shape:
                raise ConfigurationError(
                    f"entropy parameter {name!r} has shape "
                    f"{params[name].shape}, expected {shape}")

    @staticmethod
    def init_params(store: ParameterStore, channels: int,
                    rng: np.random.Generator, prefix: str = "ebm") -> None:
        """Add fresh entropy arrays for ``channels`` latent channels."""
        scale = _INIT_SCALE ** (1.0 / (len(FILTERS) + 1))
        for k in range(len(_CHAIN_WIDTHS) - 1):
            win, wout = _CHAIN_WIDTHS[k], _CHAIN_WIDTHS[k + 1]
            raw = math.log(math.expm1(1.0 / (scale * wout)))
            store[f"{prefix}.h{k}"] = np.full((channels, wout, win), raw)
            store[f"{prefix}.b{k}"] = rng.uniform(-0.5, 0.5, size=(channels, wout, 1))
            if k < len(_CHAIN_WIDTHS) - 2:
                store[f"{prefix}.a{k}"] = np.zeros((channels, wout, 1))

    # -- logit chain --------------------------------------------------------

    def _logits(self, v: np.ndarray, want_cache: bool = False):
        """Evaluate the pre-sigmoid chain at v of shape [C, M]."""
        act = v[:, None, :]
        caches = []
        stages = len(_CHAIN_WIDTHS) - 1
        for k in range(stages):
            h_eff = _softplus(self.params[f"{self.prefix}.h{k}"])
            u = h_eff @ act + self.params[f"{self.prefix}.b{k}"]
            if k < stages - 1:
                a = np.tanh(self.params[f"{self.prefix}.a{k}"])
                t = np.tanh(u)
                if want_cache:
                    caches.append((act, t, a, h_eff))
                act = u + a * t
            else:
                if want_cache:
                    caches.append((act, None, None, h_eff))
                act = u
        return act[:, 0, :], caches

    def _logits_backward(self, dlogits: np.ndarray, caches,
                         grads: dict | None) -> np.ndarray:
        dact = dlogits[:, None, :]
        for k in reversed(range(len(caches))):
            act, t, a, h_eff = caches[k]
            if t is None:
                du = dact
            else:
                du = dact * (1.0 + a * (1.0 - t * t))
                if grads is not None:
                    da = (dact * t).sum(axis=2, keepdims=True) * (1.0 - a * a)
                    _acc(grads, f"{self.prefix}.a{k}", da)
            if grads is not None:
                h_raw = self.params[f"{self.prefix}.h{k}"]
                dh = (du @ act.transpose(0, 2, 1)) * _sigmoid(h_raw)
                _acc(grads, f"{self.prefix}.h{k}", dh)
                _acc(grads, f"{self.prefix}.b{k}", du.sum(axis=2, keepdims=True))
            dact = h_eff.transpose(0, 2, 1) @ du
        return dact[:, 0, :]

    def cdf(self, v: np.ndarray) -> np.ndarray:
        """Cumulative distribution per channel; v has shape [C, M]."""
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.channels:
            raise ConfigurationError(
                f"cdf expects shape [{self.channels}, M], got {v.shape}")
        logits, _ = self._logits(v)
        return _sigmoid(logits)

    # -- likelihood and rate -------------------------------------------------

    def _likelihood_train(self, v: np.ndarray):
        lo_logit, lo_cache = self._logits(v - 0.5, want_cache=True)
        hi_logit, hi_cache = self._logits(v + 0.5, want_cache=True)
        sig_lo = _sigmoid(lo_logit)
        sig_hi = _sigmoid(hi_logit)
        raw = sig_hi - sig_lo
        floored = raw < LIKELIHOOD_FLOOR
        p = np.where(floored, LIKELIHOOD_FLOOR, raw)
        return p, (floored, sig_lo, sig_hi, lo_cache, hi_cache)

    def likelihood_values(self, v: np.ndarray) -> np.ndarray:
        """Per-element probability of the discretized bin around v ([C, M])."""
        v = np.asarray(v, dtype=np.float64)
        if not np.isfinite(v).all():
            raise NumericError("likelihood input contains non-finite values")
        p, _ = self._likelihood_train(v)
        return p

    def rate_forward(self, y: np.ndarray):
        """Bits per image for a noisy/dequantized latent batch [B, C, h, w].

        Returns (bits[B], cache); cache feeds rate_backward.
        """
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 4 or y.shape[1] != self.channels:
            raise ConfigurationError(
                f"rate expects [B, {self.channels}, h, w], got {y.shape}")
        if not np.isfinite(y).all():
            raise NumericError("rate input contains non-finite values")
        batch, chans, h, w = y.shape
        v = y.transpose(1, 0, 2, 3).reshape(chans, batch * h * w)
        p, lk_cache = self._likelihood_train(v)
        bits_elem = -np.log2(p)
        bits = bits_elem.reshape(chans, batch, h * w).sum(axis=(0, 2))
        cache = (p, lk_cache, (batch, chans, h, w))
        return bits, cache

    def rate_backward(self, dbits: np.ndarray, cache, grads: dict) -> np.ndarray:
        """Gradient of sum(dbits * bits) w.r.t. the latent batch."""
        p, (floored, sig_lo, sig_hi, lo_cache, hi_cache), shape = cache
        batch, chans, h, w = shape
        dbe = np.broadcast_to(
            np.asarray(dbits)[None, :, None], (chans, batch, h * w)
        ).reshape(chans, batch * h * w)
        dp = dbe * (-1.0 / (math.log(2.0) * p))
        dp = np.where(floored, 0.0, dp)
        dhi = dp * sig_hi * (1.0 - sig_hi)
        dlo = -dp * sig_lo * (1.0 - sig_lo)
        dv = self._logits_backward(dhi, hi_cache, grads)
        dv += self._logits_backward(dlo, lo_cache, grads)
        return dv.reshape(chans, batch, h, w).transpose(1, 0, 2, 3)

    # -- quantile searches ----------------------------------------------------

    def _solve_logit(self, target: float) -> np.ndarray:
        """Per-channel v with logits(v) == target (logits are monotone)."""
        lo = np.full(self.channels, -1.0)
        hi = np.full(self.channels, 1.0)
        for _ in range(64):
            val, _ = self._logits(lo[:, None])
            need = val[:, 0] > target
            if not need.any() or (np.abs(lo) > 1e12).all():
                break
            lo[need] *= 2.0
        for _ in range(64):
            val, _ = self._logits(hi[:, None])
            need = val[:, 0] < target
            if not need.any() or (np.abs(hi) > 1e12).all():
                break
            hi[need] *= 2.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            val, _ = self._logits(mid[:, None])
            below = val[:, 0] < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def medians(self) -> np.ndarray:
        """Per-channel median of the continuous distribution."""
        return self._solve_logit(0.0)

    def tail_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel values holding tail_mass/2 probability outside each."""
        t = self.tail_mass / 2.0
        edge = math.log(t / (1.0 - t))
        return self._solve_logit(edge), self._solve_logit(-edge)


def entropy_param_shapes(channels: int,
                         prefix: str = "ebm") -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for k in range(len(_CHAIN_WIDTHS) - 1):
        win, wout = _CHAIN_WIDTHS[k], _CHAIN_WIDTHS[k + 1]
        shapes[f"{prefix}.h{k}"] = (channels, wout, win)
        shapes[f"{prefix}.b{k}"] = (channels, wout, 1)
        if k < len(_CHAIN_WIDTHS) - 2:
            shapes[f"{prefix}.a{k}"] = (channels, wout, 1)
    return shapes


# ---------------------------------------------------------------------------
# quantization


def quantize_train(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Additive uniform noise in [-0.5, 0.5), the training stand-in for rounding."""
    y = np.asarray(y, dtype=np.float64)
    return y + rng.uniform(-0.5, 0.5, size=y.shape)


def round_half_away(v: np.ndarray) -> np.ndarray:
    """Round to nearest integer with ties away from zero (-1.5 -> -2)."""
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def quantize_eval(y: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Integer symbols: round(y - offset) with ties away from zero.

    ``y`` is [C, h, w] or [B, C, h, w]; ``offsets`` is [C].
    """
    y = np.asarray(y, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    if y.ndim not in (3, 4):
        raise ConfigurationError(
            f"quantize_eval expects 3-D or 4-D input, got {y.ndim}-D")
    if offsets.shape != (y.shape[-3],):
        raise ConfigurationError("offsets must have one entry per channel")
    if y.ndim == 3:
        shifted = y - offsets[:, None, None]
    else:
        shifted = y - offsets[None, :, None, None]
    return round_half_away(shifted).astype(np.int64)


def dequantize(symbols: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Reconstruction values for integer symbols: symbol + channel offset."""
    symbols = np.asarray(symbols)
    offsets = np.asarray(offsets, dtype=np.float64)
    if symbols.ndim == 3:
        return symbols + offsets[:, None, None]
    if symbols.ndim == 4:
        return symbols + offsets[None, :, None, None]
    raise ConfigurationError("dequantize expects 3-D or 4-D input")


def likelihood(y_hat: np.ndarray, model: FactorizedEntropyModel) -> np.ndarray:
    """Per-element probability under the model, floored at LIKELIHOOD_FLOOR."""
    y = np.asarray(y_hat, dtype=np.float64)
    if y.ndim == 3:
        v = y.reshape(y.shape[0], -1)
        return model.likelihood_values(v).reshape(y.shape)
    if y.ndim == 4:
        b, c, h, w = y.shape
        v = y.transpose(1, 0, 2, 3).reshape(c, b * h * w)
        p = model.likelihood_values(v)
        return p.reshape(c, b, h, w).transpose(1, 0, 2, 3)
    raise ConfigurationError("likelihood expects 3-D or 4-D input")


def rate_bits(y_hat: np.ndarray, model: FactorizedEntropyModel) -> float:
    """Total information content in bits: sum over elements of -log2 p."""
    p = likelihood(y_hat, model)
    return float(-np.log2(p).sum())


# ---------------------------------------------------------------------------
# frozen coding tables


@dataclass
class CdfTable:
    """Frozen per-channel symbol frequencies for range coding.

    For channel c, symbols run from min_values[c] over len(freqs[c])
    consecutive integers; frequencies are 16-bit quantized, every symbol
    has frequency >= 1 and each channel totals exactly 2^16.
    """

    offsets: np.ndarray
    min_values: np.ndarray
    freqs: list[np.ndarray]
    cums: list[np.ndarray] = field(init=False, repr=False)
    cum_lists: list[list[int]] = field(init=False, repr=False)

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.min_values = np.asarray(self.min_values, dtype=np.int64)
        if self.offsets.ndim != 1 or self.min_values.shape != self.offsets.shape:
            raise ConfigurationError("offsets and min_values must be 1-D and aligned")
        if len(self.freqs) != self.offsets.shape[0]:
            raise ConfigurationError("one frequency row required per channel")
        self.freqs = [np.asarray(f, dtype=np.uint32) for f in self.freqs]
        self.cums = []
        self.cum_lists = []
        for c, f in enumerate(self.freqs):
            if f.ndim != 1 or f.size == 0:
                raise ConfigurationError(f"channel {c} has an empty frequency row")
            if int(f.min()) < 1:
                raise ConfigurationError(f"channel {c} has a zero-frequency symbol")
            if int(f.sum()) != TABLE_TOTAL:
                raise ConfigurationError(
                    f"channel {c} frequencies sum to {int(f.sum())}, "
                    f"expected {TABLE_TOTAL}")
            cum = np.concatenate([[0], np.cumsum(f, dtype=np.int64)])
            self.cums.append(cum)
            self.cum_lists.append(cum.tolist())

    @property
    def channels(self) -> int:
        return int(self.offsets.shape[0])

    def max_values(self) -> np.ndarray:
        return self.min_values + np.array([len(f) - 1 for f in self.freqs])

    def probabilities(self, channel: int) -> np.ndarray:
        return self.freqs[channel].astype(np.float64) / TABLE_TOTAL

    def symbol_index(self, channel: int, symbol: int) -> int:
        idx = symbol - int(self.min_values[channel])
        if idx < 0 or idx >= len(self.freqs[channel]):
            raise InputError(
                f"symbol {symbol} outside table range "
                f"[{int(self.min_values[channel])}, {int(self.max_values()[channel])}] "
                f"for channel {channel}")
        return idx

    def shannon_bits(self, symbols: np.ndarray) -> float:
        """Ideal code length of a channel-major symbol tensor under this table."""
        symbols = np.asarray(symbols)
        if symbols.ndim < 2 or symbols.shape[0] != self.channels:
            raise InputError(
                f"expected leading channel axis of size {self.channels}")
        total = 0.0
        flat = symbols.reshape(self.channels, -1)
        for c in range(self.channels):
            row = flat[c]
            if row.size == 0:
                continue
            idx = row - int(self.min_values[c])
            if idx.min() < 0 or idx.max() >= len(self.freqs[c]):
                raise InputError(f"symbols outside table range for channel {c}")
            p = self.freqs[c][idx].astype(np.float64) / TABLE_TOTAL
            total += float(-np.log2(p).sum())
        return total

    def to_arrays(self, prefix: str = "cdf") -> dict[str, np.ndarray]:
        lengths = np.array([len(f) for f in self.freqs], dtype=np.int64)
        return {
            f"{prefix}.offsets": self.offsets.copy(),
            f"{prefix}.min_values": self.min_values.copy(),
            f"{prefix}.lengths": lengths,
            f"{prefix}.freqs": np.concatenate(self.freqs).astype(np.uint32),
        }

    @classmethod
    def from_arrays(cls, arrays, prefix: str = "cdf") -> "CdfTable":
        offsets = np.asarray(arrays[f"{prefix}.offsets"], dtype=np.float64)
        min_values = np.asarray(arrays[f"{prefix}.min_values"], dtype=np.int64)
        lengths = np.asarray(arrays[f"{prefix}.lengths"], dtype=np.int64)
        flat = np.asarray(arrays[f"{prefix}.freqs"], dtype=np.uint32)
        freqs = []
        pos = 0
        for n in lengths:
            freqs.append(flat[pos:pos + int(n)])
            pos += int(n)
        return cls(offsets=offsets, min_values=min_values, freqs=freqs)


def _quantize_pmf(pmf: np.ndarray) -> np.ndarray:
    """16-bit frequencies: every symbol >= 1, total exactly TABLE_TOTAL."""
    n = pmf.size
    pmf = np.maximum(np.asarray(pmf, dtype=np.float64), 0.0)
    pmf = pmf / pmf.sum()
    budget = TABLE_TOTAL - n
    scaled = pmf * budget
    base = np.floor(scaled).astype(np.int64)
    remainder = budget - int(base.sum())
    frac = scaled - base
    order = np.lexsort((np.arange(n), -frac))
    base[order[:remainder]] += 1
    return (base + 1).astype(np.uint32)


def freeze_cdf(model: FactorizedEntropyModel,
               stats: tuple[np.ndarray, np.ndarray] | None = None) -> CdfTable:
    """Freeze the learned distributions into an integer coding table.

    ``stats`` optionally supplies per-channel (min, max) of observed
    continuous latents; the symbol range is the union of that span and
    the model's tail-mass quantiles, extended by a 1-symbol margin.
    Deterministic for fixed parameters and stats.
    """
    offsets = model.medians()
    lo, hi = model.tail_bounds()
    if stats is not None:
        obs_lo = np.asarray(stats[0], dtype=np.float64)
        obs_hi = np.asarray(stats[1], dtype=np.float64)
        if obs_lo.shape != (model.channels,) or obs_hi.shape != (model.channels,):
            raise ConfigurationError("stats must carry one (min, max) per channel")
        lo = np.minimum(lo, obs_lo)
        hi = np.maximum(hi, obs_hi)
    min_values = np.floor(lo - offsets).astype(np.int64) - 1
    max_values = np.ceil(hi - offsets).astype(np.int64) + 1
    counts = max_values - min_values + 1
    too_wide = counts > MAX_TABLE_SYMBOLS
    if too_wide.any():
        c = int(np.argmax(too_wide))
        raise FreezeError(
            f"channel {c} needs {int(counts[c])} symbols "
            f"(limit {MAX_TABLE_SYMBOLS}); distribution too wide to freeze")
    width = int(counts.max())
    # One padded evaluation covers all channels; rows are masked to their
    # own symbol count afterwards.
    grid = min_values[:, None] + np.arange(width)[None, :]
    values = offsets[:, None] + grid.astype(np.float64)
    pmf_full = model.likelihood_values(values)
    raw_hi = _sigmoid(model._logits(values + 0.5)[0])
    raw_lo = _sigmoid(model._logits(values - 0.5)[0])
    raw_pmf = raw_hi - raw_lo
    freqs = []
    for c in range(model.channels):
        n = int(counts[c])
        row = raw_pmf[c, :n]
        if row.sum() < 1e-6:
            raise FreezeError(
                f"channel {c} holds no probability mass over its symbol range")
        freqs.append(_quantize_pmf(pmf_full[c, :n]))
    return CdfTable(offsets=offsets, min_values=min_values, freqs=freqs)
