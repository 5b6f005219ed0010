"""Analysis and synthesis transforms.

The analysis side stacks stride-2 convolutions with GDN1 nonlinearities
between them; the synthesis side mirrors it with stride-2 transposed
convolutions and IGDN1. Everything is float64 numpy and functional:
forward passes are pure functions of (input, parameters), training
variants additionally return caches consumed by the matching backward
functions, which accumulate parameter gradients into a plain dict.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .errors import ConfigurationError, FormatError, InputError

KERNEL_SIZE = 5
STRIDE = 2
PAD = KERNEL_SIZE // 2
OUTPUT_PAD = STRIDE - 1
BETA_MIN = 1e-6

# Cap on the size of a single im2col buffer before row chunking kicks in.
_MAX_COL_BYTES = 128 << 20

_STORE_MAGIC = b"ARCW"
_STORE_VERSION = 1
_HASH_EXCLUDE_PREFIXES = ("opt.",)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters shared by every component.

    ``width_n`` is the channel count of every internal layer and of the
    latent; ``hidden_layers_m`` the number of hidden conv/GDN pairs, so
    each transform has ``hidden_layers_m + 2`` conv layers total.
    """

    width_n: int = 128
    hidden_layers_m: int = 2
    kernel_size: int = KERNEL_SIZE
    stride: int = STRIDE
    input_channels: int = 3
    input_size: int = 512

    def __post_init__(self):
        if self.width_n < 1:
            raise ConfigurationError(f"width_n must be positive, got {self.width_n}")
        if self.hidden_layers_m < 1:
            raise ConfigurationError(
                f"hidden_layers_m must be positive, got {self.hidden_layers_m}"
            )
        if self.kernel_size != KERNEL_SIZE:
            raise ConfigurationError(f"kernel_size is fixed at {KERNEL_SIZE}")
        if self.stride != STRIDE:
            raise ConfigurationError(f"stride is fixed at {STRIDE}")
        if self.input_channels < 1:
            raise ConfigurationError("input_channels must be positive")
        if self.input_size < self.downscale or self.input_size % self.downscale:
            raise ConfigurationError(
                f"input_size {self.input_size} is not divisible by "
                f"2^(hidden_layers_m + 2) = {self.downscale}"
            )

    @property
    def num_layers(self) -> int:
        return self.hidden_layers_m + 2

    @property
    def downscale(self) -> int:
        return self.stride ** (self.hidden_layers_m + 2)

    def latent_spatial(self, height: int, width: int) -> tuple[int, int]:
        """Latent grid for an input of the given pixel dims."""
        d = self.downscale
        if height % d or width % d:
            raise InputError(
                f"image dims {height}x{width} not divisible by {d} "
                f"(required for {self.num_layers} stride-{self.stride} layers)"
            )
        return height // d, width // d

    def to_dict(self) -> dict:
        return {
            "width_n": self.width_n,
            "hidden_layers_m": self.hidden_layers_m,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "input_channels": self.input_channels,
            "input_size": self.input_size,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        try:
            return cls(**{k: int(d[k]) for k in (
                "width_n", "hidden_layers_m", "kernel_size", "stride",
                "input_channels", "input_size")})
        except KeyError as exc:
            raise FormatError(f"config is missing field {exc}") from exc


def _analysis_plan(config: ModelConfig) -> list[tuple[int, int]]:
    chans = [config.input_channels] + [config.width_n] * (config.num_layers)
    return list(zip(chans[:-1], chans[1:]))


def _synthesis_plan(config: ModelConfig) -> list[tuple[int, int]]:
    chans = [config.width_n] * (config.num_layers) + [config.input_channels]
    return list(zip(chans[:-1], chans[1:]))


# ---------------------------------------------------------------------------
# parameter storage


class ParameterStore:
    """Named float64 arrays with deterministic ordering.

    Behaves like a mapping from parameter name to ndarray. Missing names
    raise ConfigurationError since they always indicate a store that does
    not match the model expecting it.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        if arrays:
            for name, arr in arrays.items():
                self[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._arrays[name]
        except KeyError:
            raise ConfigurationError(f"parameter store has no array named {name!r}")

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if not isinstance(name, str) or not name:
            raise ConfigurationError("parameter names must be non-empty strings")
        arr = np.ascontiguousarray(value)
        self._arrays[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return sorted(self._arrays)

    def items_sorted(self) -> list[tuple[str, np.ndarray]]:
        return [(n, self._arrays[n]) for n in self.names()]

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        return {n: a for n, a in self._arrays.items() if n.startswith(prefix)}

    def without(self, prefixes: tuple[str, ...]) -> "ParameterStore":
        return ParameterStore(
            {n: a for n, a in self._arrays.items()
             if not n.startswith(prefixes)}
        )

    def copy(self) -> "ParameterStore":
        return ParameterStore({n: a.copy() for n, a in self._arrays.items()})

    def update(self, arrays: Mapping[str, np.ndarray]) -> None:
        for n, a in arrays.items():
            self[n] = a

    def equals(self, other: "ParameterStore") -> bool:
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[n], other[n]) for n in self.names())


def _le_bytes(arr: np.ndarray) -> tuple[str, bytes]:
    le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
    return str(le.dtype), le.tobytes()


def content_hash(config: ModelConfig, store: ParameterStore) -> int:
    """64-bit digest over the config and every decode-relevant array.

    Optimizer state ("opt." prefix) is excluded so that the same weights
    hash identically whether or not training bookkeeping is attached.
    """
    h = hashlib.sha256()
    h.update(json.dumps(config.to_dict(), sort_keys=True).encode())
    for name, arr in store.items_sorted():
        if name.startswith(_HASH_EXCLUDE_PREFIXES):
            continue
        dtype, raw = _le_bytes(arr)
        h.update(name.encode())
        h.update(dtype.encode())
        h.update(json.dumps(list(arr.shape)).encode())
        h.update(raw)
    return int.from_bytes(h.digest()[:8], "big")


def save_store(path, store: ParameterStore, config: ModelConfig,
               meta: Mapping | None = None) -> int:
    """Write a named-array container; returns the content hash stored in it.

    Layout: magic, version byte, u32 header length, JSON header listing
    (name, dtype, shape, offset, nbytes) per array plus the config, meta
    and content hash, then the raw little-endian arrays sorted by name.
    """
    entries = []
    blob = bytearray()
    for name, arr in store.items_sorted():
        dtype, raw = _le_bytes(arr)
        entries.append({
            "name": name,
            "dtype": dtype,
            "shape": list(arr.shape),
            "offset": len(blob),
            "nbytes": len(raw),
        })
        blob += raw
    digest = content_hash(config, store)
    header = {
        "config": config.to_dict(),
        "meta": dict(meta or {}),
        "arrays": entries,
        "hash": f"{digest:016x}",
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_STORE_MAGIC)
        fh.write(struct.pack("<BI", _STORE_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(blob))
    return digest


def load_store(path) -> tuple[ParameterStore, ModelConfig, dict]:
    """Read a named-array container written by save_store.

    Verifies magic, version and the stored content hash; any mismatch or
    truncation raises FormatError rather than returning partial data.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 9 or data[:4] != _STORE_MAGIC:
        raise FormatError("not a parameter container (bad magic)")
    version, header_len = struct.unpack_from("<BI", data, 4)
    if version != _STORE_VERSION:
        raise FormatError(f"unsupported container version {version}")
    header_end = 9 + header_len
    if len(data) < header_end:
        raise FormatError("truncated container header")
    try:
        header = json.loads(data[9:header_end])
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt container header: {exc}") from exc
    blob = data[header_end:]
    store = ParameterStore()
    for entry in header.get("arrays", []):
        start = entry["offset"]
        end = start + entry["nbytes"]
        if end > len(blob):
            raise FormatError(f"truncated container data for {entry['name']!r}")
        arr = np.frombuffer(blob[start:end], dtype=np.dtype(entry["dtype"]))
        expected = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if arr.size != expected:
            raise FormatError(f"array {entry['name']!r} has inconsistent size")
        store[entry["name"]] = arr.reshape(entry["shape"]).copy()
    config = ModelConfig.from_dict(header.get("config", {}))
    stored_hash = int(header.get("hash", "0"), 16)
    if content_hash(config, store) != stored_hash:
        raise FormatError("container content does not match its stored hash")
    return store, config, dict(header.get("meta", {}))


# ---------------------------------------------------------------------------
# convolution primitives


def _im2col(xp: np.ndarray, kernel: int, stride: int,
            out_h: int, out_w: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    if win.shape[2] != out_h or win.shape[3] != out_w:
        raise ConfigurationError("im2col geometry mismatch")
    batch, chans = xp.shape[0], xp.shape[1]
    col = win.transpose(0, 1, 4, 5, 2, 3).reshape(
        batch, chans * kernel * kernel, out_h * out_w)
    return np.ascontiguousarray(col)


def _col2im(col: np.ndarray, batch: int, chans: int, padded_h: int, padded_w: int,
            kernel: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    acc = np.zeros((batch, chans, padded_h, padded_w))
    col6 = col.reshape(batch, chans, kernel, kernel, out_h, out_w)
    for ki in range(kernel):
        for kj in range(kernel):
            acc[:, :, ki:ki + stride * out_h:stride,
                kj:kj + stride * out_w:stride] += col6[:, :, ki, kj]
    return acc


def _conv_geometry(h: int, w: int, kernel: int, stride: int, pad: int):
    out_h = (h + 2 * pad - kernel) // stride + 1
    out_w = (w + 2 * pad - kernel) // stride + 1
    return out_h, out_w


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int = STRIDE, pad: int = PAD) -> np.ndarray:
    """Strided convolution, chunked over output rows for large inputs."""
    batch, cin, h, wd = x.shape
    cout, cin_w, kernel, _ = w.shape
    if cin_w != cin:
        raise ConfigurationError(
            f"conv kernel expects {cin_w} input channels, got {cin}")
    out_h, out_w = _conv_geometry(h, wd, kernel, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    wm = w.reshape(cout, -1)
    col_bytes = batch * cin * kernel * kernel * out_h * out_w * 8
    if col_bytes <= _MAX_COL_BYTES:
        col = _im2col(xp, kernel, stride, out_h, out_w)
        y = (wm @ col).reshape(batch, cout, out_h, out_w)
    else:
        y = np.empty((batch, cout, out_h, out_w))
        rows = max(1, _MAX_COL_BYTES // (batch * cin * kernel * kernel * out_w * 8))
        for r0 in range(0, out_h, rows):
            r1 = min(r0 + rows, out_h)
            xs = xp[:, :, r0 * stride:(r1 - 1) * stride + kernel, :]
            col = _im2col(xs, kernel, stride, r1 - r0, out_w)
            y[:, :, r0:r1, :] = (wm @ col).reshape(batch, cout, r1 - r0, out_w)
    return y + b[:, None, None]


def conv2d_train(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                 stride: int = STRIDE, pad: int = PAD):
    """Convolution that keeps the im2col buffer for the backward pass."""
    batch, cin, h, wd = x.shape
    cout, cin_w, kernel, _ = w.shape
    if cin_w != cin:
        raise ConfigurationError(
            f"conv kernel expects {cin_w} input channels, got {cin}")
    out_h, out_w = _conv_geometry(h, wd, kernel, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    col = _im2col(xp, kernel, stride, out_h, out_w)
    y = (w.reshape(cout, -1) @ col).reshape(batch, cout, out_h, out_w)
    cache = (w, col, x.shape, stride, pad, out_h, out_w)
    return y + b[:, None, None], cache


def conv2d_backward(dy: np.ndarray, cache):
    w, col, x_shape, stride, pad, out_h, out_w = cache
    batch, cin, h, wd = x_shape
    cout, _, kernel, _ = w.shape
    dy_flat = dy.reshape(batch, cout, out_h * out_w)
    dw = np.einsum("bop,bcp->oc", dy_flat, col, optimize=True).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    dcol = w.reshape(cout, -1).T @ dy_flat
    dxp = _col2im(dcol, batch, cin, h + 2 * pad, wd + 2 * pad,
                  kernel, stride, out_h, out_w)
    dx = dxp[:, :, pad:pad + h, pad:pad + wd]
    return dx, dw, db


def _tconv_geometry(h: int, w: int, kernel: int, stride: int, pad: int, out_pad: int):
    out_h = (h - 1) * stride - 2 * pad + kernel + out_pad
    out_w = (w - 1) * stride - 2 * pad + kernel + out_pad
    return out_h, out_w


def tconv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                    stride: int = STRIDE, pad: int = PAD,
                    out_pad: int = OUTPUT_PAD) -> np.ndarray:
    """Transposed convolution (exact adjoint of conv2d_forward's linear map).

    With the default stride/pad/out_pad each spatial dim exactly doubles.
    """
    batch, cin, h, wd = x.shape
    cout, cin_w, kernel, _ = w.shape
    if cin_w != cin:
        raise ConfigurationError(
            f"tconv kernel expects {cin_w} input channels, got {cin}")
    out_h, out_w = _tconv_geometry(h, wd, kernel, stride, pad, out_pad)
    padded_h, padded_w = out_h + 2 * pad, out_w + 2 * pad
    wm = w.transpose(1, 0, 2, 3).reshape(cin, cout * kernel * kernel)
    col_bytes = batch * cout * kernel * kernel * h * wd * 8
    if col_bytes <= _MAX_COL_BYTES:
        col = wm.T @ x.reshape(batch, cin, h * wd)
        yp = _col2im(col, batch, cout, padded_h, padded_w, kernel, stride, h, wd)
    else:
        yp = np.zeros((batch, cout, padded_h, padded_w))
        rows = max(1, _MAX_COL_BYTES // (batch * cout * kernel * kernel * wd * 8))
        for r0 in range(0, h, rows):
            r1 = min(r0 + rows, h)
            xs = x[:, :, r0:r1, :].reshape(batch, cin, (r1 - r0) * wd)
            colc = wm.T @ xs
            sub_h = (r1 - r0 - 1) * stride + kernel
            chunk = _col2im(colc, batch, cout, sub_h, padded_w,
                            kernel, stride, r1 - r0, wd)
            yp[:, :, r0 * stride:r0 * stride + sub_h, :] += chunk
    y = yp[:, :, pad:pad + out_h, pad:pad + out_w]
    return y + b[:, None, None]


def tconv2d_train(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  stride: int = STRIDE, pad: int = PAD,
                  out_pad: int = OUTPUT_PAD):
    y = tconv2d_forward(x, w, b, stride, pad, out_pad)
    cache = (w, x.reshape(x.shape[0], x.shape[1], -1), x.shape,
             stride, pad, y.shape[2], y.shape[3])
    return y, cache


def tconv2d_backward(dy: np.ndarray, cache):
    w, x_flat, x_shape, stride, pad, out_h, out_w = cache
    batch, cin, h, wd = x_shape
    cout, _, kernel, _ = w.shape
    dyp = np.pad(dy, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dcol = _im2col(dyp, kernel, stride, h, wd)
    wm = w.transpose(1, 0, 2, 3).reshape(cin, cout * kernel * kernel)
    dx = (wm @ dcol).reshape(batch, cin, h, wd)
    dwv = np.einsum("bip,bqp->iq", x_flat, dcol, optimize=True)
    dw = dwv.reshape(cin, cout, kernel, kernel).transpose(1, 0, 2, 3)
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


# ---------------------------------------------------------------------------
# GDN1 / IGDN1


@dataclass
class Gdn1Params:
    """Raw (pre-reparameterization) GDN1 parameters for one layer.

    The effective values seen by the transform are floored: beta at
    BETA_MIN, gamma at zero, so optimization can never drive the
    denominator non-positive.
    """

    beta_raw: np.ndarray
    gamma_raw: np.ndarray

    def __post_init__(self):
        self.beta_raw = np.asarray(self.beta_raw, dtype=np.float64)
        self.gamma_raw = np.asarray(self.gamma_raw, dtype=np.float64)
        c = self.beta_raw.shape[0] if self.beta_raw.ndim == 1 else -1
        if self.beta_raw.ndim != 1 or self.gamma_raw.shape != (c, c):
            raise ConfigurationError(
                "GDN1 expects beta of shape [C] and gamma of shape [C, C]")
        if not (np.isfinite(self.beta_raw).all() and np.isfinite(self.gamma_raw).all()):
            raise ConfigurationError("GDN1 parameters must be finite")

    @property
    def beta(self) -> np.ndarray:
        return np.maximum(self.beta_raw, BETA_MIN)

    @property
    def gamma(self) -> np.ndarray:
        return np.maximum(self.gamma_raw, 0.0)


def _norm_input(x: np.ndarray, channels: int):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    x4 = x[None] if single else x
    if x4.ndim != 4 or x4.shape[1] != channels:
        raise ConfigurationError(
            f"expected input with {channels} channels, got shape {x.shape}")
    return x4, single


def _gdn_mix(x4: np.ndarray, p: Gdn1Params):
    ax = np.abs(x4)
    denom = p.beta[:, None, None] + np.einsum(
        "ij,bjhw->bihw", p.gamma, ax, optimize=True)
    return ax, denom


def gdn1_forward(x: np.ndarray, p: Gdn1Params) -> np.ndarray:
    """y_i = x_i / (beta_i + sum_j gamma_ij |x_j|)."""
    x4, single = _norm_input(x, p.beta_raw.shape[0])
    _, denom = _gdn_mix(x4, p)
    y = x4 / denom
    return y[0] if single else y


def gdn1_train(x: np.ndarray, p: Gdn1Params):
    x4, single = _norm_input(x, p.beta_raw.shape[0])
    if single:
        raise ConfigurationError("training pass expects batched input")
    ax, denom = _gdn_mix(x4, p)
    y = x4 / denom
    cache = (x4, ax, denom, p)
    return y, cache


def gdn1_backward(dy: np.ndarray, cache):
    x4, ax, denom, p = cache
    t = dy * x4 / (denom * denom)
    dx = dy / denom - np.sign(x4) * np.einsum(
        "ij,bihw->bjhw", p.gamma, t, optimize=True)
    dbeta = -t.sum(axis=(0, 2, 3))
    dgamma = -np.einsum("bihw,bjhw->ij", t, ax, optimize=True)
    dbeta *= p.beta_raw >= BETA_MIN
    dgamma *= p.gamma_raw >= 0.0
    return dx, dbeta, dgamma


def igdn1_forward(x: np.ndarray, p: Gdn1Params) -> np.ndarray:
    """y_i = x_i * (beta_i + sum_j gamma_ij |x_j|)."""
    x4, single = _norm_input(x, p.beta_raw.shape[0])
    _, denom = _gdn_mix(x4, p)
    y = x4 * denom
    return y[0] if single else y


def igdn1_train(x: np.ndarray, p: Gdn1Params):
    x4, single = _norm_input(x, p.beta_raw.shape[0])
    if single:
        raise ConfigurationError("training pass expects batched input")
    ax, denom = _gdn_mix(x4, p)
    y = x4 * denom
    cache = (x4, ax, denom, p)
    return y, cache


def igdn1_backward(dy: np.ndarray, cache):
    x4, ax, denom, p = cache
    s = dy * x4
    dx = dy * denom + np.sign(x4) * np.einsum(
        "ij,bihw->bjhw", p.gamma, s, optimize=True)
    dbeta = s.sum(axis=(0, 2, 3))
    dgamma = np.einsum("bihw,bjhw->ij", s, ax, optimize=True)
    dbeta *= p.beta_raw >= BETA_MIN
    dgamma *= p.gamma_raw >= 0.0
    return dx, dbeta, dgamma


# ---------------------------------------------------------------------------
# full transforms


def _gdn_params(params: ParameterStore, prefix: str) -> Gdn1Params:
    return Gdn1Params(params[f"{prefix}.beta"], params[f"{prefix}.gamma"])


def _check_image_range(x4: np.ndarray) -> None:
    if x4.size and (x4.min() < 0.0 or x4.max() > 1.0):
        raise InputError("image values must lie in [0, 1]")
    if not np.isfinite(x4).all():
        raise InputError("image values must be finite")


def analysis_forward(image: np.ndarray, params: ParameterStore,
                     config: ModelConfig) -> np.ndarray:
    """Map an image in [0, 1] to its continuous latent.

    Accepts [C, H, W] or [B, C, H, W]; dims must be divisible by
    2^(hidden_layers_m + 2). No nonlinearity follows the last conv.
    """
    x4, single = _norm_input(image, config.input_channels)
    config.latent_spatial(x4.shape[2], x4.shape[3])
    _check_image_range(x4)
    x = x4
    last = config.num_layers - 1
    for i in range(config.num_layers):
        x = conv2d_forward(x, params[f"enc{i}.w"], params[f"enc{i}.b"])
        if i < last:
            x = gdn1_forward(x, _gdn_params(params, f"enc{i}.gdn"))
    return x[0] if single else x


def analysis_train(image: np.ndarray, params: ParameterStore,
                   config: ModelConfig):
    x4, single = _norm_input(image, config.input_channels)
    if single:
        raise ConfigurationError("training pass expects batched input")
    config.latent_spatial(x4.shape[2], x4.shape[3])
    _check_image_range(x4)
    x = x4
    caches = []
    last = config.num_layers - 1
    for i in range(config.num_layers):
        x, c = conv2d_train(x, params[f"enc{i}.w"], params[f"enc{i}.b"])
        caches.append(("conv", i, c))
        if i < last:
            x, c = gdn1_train(x, _gdn_params(params, f"enc{i}.gdn"))
            caches.append(("gdn", i, c))
    return x, caches


def analysis_backward(dlatent: np.ndarray, caches, grads: dict) -> np.ndarray:
    """Backprop through the analysis transform, accumulating into grads."""
    d = dlatent
    for kind, i, cache in reversed(caches):
        if kind == "conv":
            d, dw, db = conv2d_backward(d, cache)
            _acc(grads, f"enc{i}.w", dw)
            _acc(grads, f"enc{i}.b", db)
        else:
            d, dbeta, dgamma = gdn1_backward(d, cache)
            _acc(grads, f"enc{i}.gdn.beta", dbeta)
            _acc(grads, f"enc{i}.gdn.gamma", dgamma)
    return d


def synthesis_forward(latent: np.ndarray, params: ParameterStore,
                      config: ModelConfig, clamp: bool = True) -> np.ndarray:
    """Map a latent back to image space.

    Output is clamped to [0, 1] by default (inference); pass clamp=False
    to obtain the raw transform output.
    """
    x4, single = _norm_input(latent, config.width_n)
    x = x4
    last = config.num_layers - 1
    for i in range(config.num_layers):
        x = tconv2d_forward(x, params[f"dec{i}.w"], params[f"dec{i}.b"])
        if i < last:
            x = igdn1_forward(x, _gdn_params(params, f"dec{i}.igdn"))
    if clamp:
        x = np.clip(x, 0.0, 1.0)
    return x[0] if single else x


def synthesis_train(latent: np.ndarray, params: ParameterStore,
                    config: ModelConfig):
    """Unclamped synthesis pass with caches for the backward pass."""
    x4, single = _norm_input(latent, config.width_n)
    if single:
        raise ConfigurationError("training pass expects batched input")
    x = x4
    caches = []
    last = config.num_layers - 1
    for i in range(config.num_layers):
        x, c = tconv2d_train(x, params[f"dec{i}.w"], params[f"dec{i}.b"])
        caches.append(("tconv", i, c))
        if i < last:
            x, c = igdn1_train(x, _gdn_params(params, f"dec{i}.igdn"))
            caches.append(("igdn", i, c))
    return x, caches


def synthesis_backward(dimage: np.ndarray, caches, grads: dict) -> np.ndarray:
    d = dimage
    for kind, i, cache in reversed(caches):
        if kind == "tconv":
            d, dw, db = tconv2d_backward(d, cache)
            _acc(grads, f"dec{i}.w", dw)
            _acc(grads, f"dec{i}.b", db)
        else:
            d, dbeta, dgamma = igdn1_backward(d, cache)
            _acc(grads, f"dec{i}.igdn.beta", dbeta)
            _acc(grads, f"dec{i}.igdn.gamma", dgamma)
    return d


def _acc(grads: dict, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


# ---------------------------------------------------------------------------
# initialization


def _variance_scaled(rng: np.random.Generator, cout: int, cin: int,
                     kernel: int) -> np.ndarray:
    fan_in = cin * kernel * kernel
    fan_out = cout * kernel * kernel
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(cout, cin, kernel, kernel))


def init_parameters(config: ModelConfig, seed: int = 0) -> ParameterStore:
    """Fresh transform parameters (entropy-model arrays are added separately)."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    last = config.num_layers - 1
    for i, (cin, cout) in enumerate(_analysis_plan(config)):
        store[f"enc{i}.w"] = _variance_scaled(rng, cout, cin, config.kernel_size)
        store[f"enc{i}.b"] = np.zeros(cout)
        if i < last:
            store[f"enc{i}.gdn.beta"] = np.ones(cout)
            store[f"enc{i}.gdn.gamma"] = 0.1 * np.eye(cout)
    for i, (cin, cout) in enumerate(_synthesis_plan(config)):
        store[f"dec{i}.w"] = _variance_scaled(rng, cout, cin, config.kernel_size)
        store[f"dec{i}.b"] = np.zeros(cout)
        if i < last:
            store[f"dec{i}.igdn.beta"] = np.ones(cout)
            store[f"dec{i}.igdn.gamma"] = 0.1 * np.eye(cout)
    return store


def transform_param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Expected name -> shape map for the conv/GDN parameters."""
    k = config.kernel_size
    shapes: dict[str, tuple[int, ...]] = {}
    last = config.num_layers - 1
    for i, (cin, cout) in enumerate(_analysis_plan(config)):
        shapes[f"enc{i}.w"] = (cout, cin, k, k)
        shapes[f"enc{i}.b"] = (cout,)
        if i < last:
            shapes[f"enc{i}.gdn.beta"] = (cout,)
            shapes[f"enc{i}.gdn.gamma"] = (cout, cout)
    for i, (cin, cout) in enumerate(_synthesis_plan(config)):
        shapes[f"dec{i}.w"] = (cout, cin, k, k)
        shapes[f"dec{i}.b"] = (cout,)
        if i < last:
            shapes[f"dec{i}.igdn.beta"] = (cout,)
            shapes[f"dec{i}.igdn.gamma"] = (cout, cout)
    return shapes
