"""Bitstream container and end-to-end image encode/decode.

A bitstream is a fixed 30-byte little-endian header followed by the
range-coded payload. The header pins the architecture (N, M), the image
and latent geometry, the payload length, and a 64-bit content hash of
the model that produced it, so decoding with different weights fails
loudly instead of producing garbage.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .bottleneck import (CdfTable, FactorizedEntropyModel, dequantize,
                         quantize_eval)
from .errors import FormatError, InputError, ModelMismatchError, DecodeError
from .model import (ModelConfig, ParameterStore, analysis_forward,
                    content_hash, load_store, synthesis_forward)
from .rangecoder import rc_decode, rc_encode

MAGIC = b"ARC1"
VERSION = 1
_HEADER = struct.Struct("<4sBHBHHHHHQI")
HEADER_SIZE = _HEADER.size
BITSTREAM_EXTENSION = ".arc"

_U16_MAX = 0xFFFF


@dataclass(frozen=True)
class BitstreamHeader:
    """Fixed-size bitstream prefix; all integers little-endian."""

    width_n: int
    hidden_layers_m: int
    image_width: int
    image_height: int
    latent_channels: int
    latent_height: int
    latent_width: int
    model_hash: int
    payload_length: int

    def pack(self) -> bytes:
        for name in ("width_n", "image_width", "image_height",
                     "latent_channels", "latent_height", "latent_width"):
            v = getattr(self, name)
            if not 0 < v <= _U16_MAX:
                raise InputError(f"header field {name}={v} does not fit in u16")
        if not 0 < self.hidden_layers_m <= 0xFF:
            raise InputError("hidden_layers_m does not fit in u8")
        return _HEADER.pack(
            MAGIC, VERSION, self.width_n, self.hidden_layers_m,
            self.image_width, self.image_height, self.latent_channels,
            self.latent_height, self.latent_width, self.model_hash,
            self.payload_length)

    @classmethod
    def unpack(cls, data: bytes) -> "BitstreamHeader":
        if len(data) < HEADER_SIZE:
            raise FormatError(
                f"bitstream shorter than the {HEADER_SIZE}-byte header")
        (magic, version, width_n, m, img_w, img_h, lat_c, lat_h, lat_w,
         model_hash, payload_length) = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise FormatError(f"unsupported bitstream version {version}")
        header = cls(width_n=width_n, hidden_layers_m=m, image_width=img_w,
                     image_height=img_h, latent_channels=lat_c,
                     latent_height=lat_h, latent_width=lat_w,
                     model_hash=model_hash, payload_length=payload_length)
        header.validate_geometry()
        return header

    def validate_geometry(self) -> None:
        """Latent dims must match the image dims under M stride-2 stages."""
        down = 2 ** (self.hidden_layers_m + 2)
        if (self.latent_channels != self.width_n
                or self.image_height != self.latent_height * down
                or self.image_width != self.latent_width * down):
            raise FormatError(
                f"header geometry inconsistent: image "
                f"{self.image_width}x{self.image_height}, latent "
                f"{self.latent_channels}x{self.latent_height}x{self.latent_width}, "
                f"N={self.width_n}, M={self.hidden_layers_m}")


@dataclass
class CodecBundle:
    """Everything needed to encode or decode: config, weights, table, hash."""

    config: ModelConfig
    params: ParameterStore
    table: CdfTable
    model_hash: int

    @classmethod
    def from_parts(cls, config: ModelConfig, params: ParameterStore,
                   table: CdfTable) -> "CodecBundle":
        store = params.copy()
        store.update(table.to_arrays("cdf"))
        return cls(config=config, params=params, table=table,
                   model_hash=content_hash(config, store))

    @classmethod
    def load(cls, path) -> "CodecBundle":
        """Build a bundle from a checkpoint that carries a frozen table."""
        store, config, _meta = load_store(path)
        if "cdf.offsets" not in store:
            raise FormatError(
                f"{path} has no frozen coding table; train (or evaluate) "
                "before using it as a codec model")
        table = CdfTable.from_arrays(store, "cdf")
        params = store.without(("opt.",))
        model_hash = content_hash(config, params)
        weights = params.without(("cdf.",))
        # Construct the entropy view once to validate the arrays exist.
        FactorizedEntropyModel(config.width_n, weights)
        return cls(config=config, params=weights, table=table,
                   model_hash=model_hash)


def encode_image(image: np.ndarray, bundle: CodecBundle) -> bytes:
    """Compress one [C, H, W] image in [0, 1] into a full bitstream."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise InputError(f"expected a [C, H, W] image, got {image.ndim}-D")
    _, height, width = image.shape
    lat_h, lat_w = bundle.config.latent_spatial(height, width)
    y = analysis_forward(image, bundle.params, bundle.config)
    symbols = quantize_eval(y, bundle.table.offsets)
    payload = rc_encode(symbols, bundle.table)
    header = BitstreamHeader(
        width_n=bundle.config.width_n,
        hidden_layers_m=bundle.config.hidden_layers_m,
        image_width=width, image_height=height,
        latent_channels=bundle.config.width_n,
        latent_height=lat_h, latent_width=lat_w,
        model_hash=bundle.model_hash,
        payload_length=len(payload))
    return header.pack() + payload


def decode_image(data: bytes, bundle: CodecBundle) -> np.ndarray:
    """Reconstruct the [C, H, W] image from a bitstream, clamped to [0, 1]."""
    header = BitstreamHeader.unpack(data)
    if header.model_hash != bundle.model_hash:
        raise ModelMismatchError(
            f"bitstream was produced by model {header.model_hash:016x}, "
            f"loaded model is {bundle.model_hash:016x}")
    if (header.width_n != bundle.config.width_n
            or header.hidden_layers_m != bundle.config.hidden_layers_m):
        raise ModelMismatchError("header architecture disagrees with the model")
    payload = data[HEADER_SIZE:]
    if len(payload) != header.payload_length:
        raise DecodeError(
            f"payload length {len(payload)} does not match the declared "
            f"{header.payload_length} bytes")
    count = header.latent_channels * header.latent_height * header.latent_width
    symbols = rc_decode(payload, bundle.table, count).reshape(
        header.latent_channels, header.latent_height, header.latent_width)
    y_hat = dequantize(symbols, bundle.table.offsets)
    return synthesis_forward(y_hat, bundle.params, bundle.config, clamp=True)


def bpp(data: bytes) -> float:
    """Bits per pixel of a full bitstream: 8 * total bytes / pixel count."""
    header = BitstreamHeader.unpack(data)
    expected = HEADER_SIZE + header.payload_length
    if len(data) != expected:
        raise FormatError(
            f"bitstream is {len(data)} bytes, header declares {expected}")
    return 8.0 * len(data) / (header.image_width * header.image_height)
