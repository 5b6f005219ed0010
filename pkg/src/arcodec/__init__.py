"""Learned image codec that anonymizes head regions during compression.

The training objective drives the reconstruction error down everywhere
except inside annotated head boxes, where it is driven up, so decoded
images come out of the bitstream with faces destroyed. The package
covers the convolutional transforms with hand-written gradients, a
factorized entropy bottleneck, range coding, the region-weighted loss,
dataset handling, training, the bitstream format, and detection-based
evaluation.
"""

from .bottleneck import (CdfTable, FactorizedEntropyModel, dequantize,
                         freeze_cdf, likelihood, quantize_eval,
                         quantize_train, rate_bits, round_half_away)
from .codec import (BITSTREAM_EXTENSION, BitstreamHeader, CodecBundle, bpp,
                    decode_image, encode_image)
from .data import (AnnotatedImage, DatasetManifest, load_dataset, load_image,
                   make_synthetic_dataset, parse_annotations, rescale,
                   save_image, write_synthetic_dataset)
from .errors import (ArcodecError, ConfigurationError, DecodeError,
                     EncodeError, FormatError, FreezeError, InputError,
                     ModelMismatchError, NumericError, ParseError)
from .evaluation import (APResult, Detection, LatencyStats,
                         evaluate_detections, ingest_detections, iou,
                         latency_bench, match_detections,
                         rate_precision_report, voc_ap)
from .loss import (BoundingBox, LossBreakdown, LossWeights, crop, mse,
                   region_mask, roi_loss, roi_loss_batch, total_loss)
from .model import (ModelConfig, ParameterStore, analysis_forward,
                    content_hash, gdn1_forward, igdn1_forward,
                    init_parameters, load_store, save_store,
                    synthesis_forward)
from .rangecoder import rc_decode, rc_encode
from .trainer import (AdamState, TrainConfig, TrainState, checkpoint,
                      evaluate, fit, init_state, restore, train_epoch)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedImage", "APResult", "AdamState", "ArcodecError",
    "BITSTREAM_EXTENSION", "BitstreamHeader", "BoundingBox", "CdfTable",
    "CodecBundle", "ConfigurationError", "DatasetManifest", "DecodeError",
    "Detection", "EncodeError", "FactorizedEntropyModel", "FormatError",
    "FreezeError", "InputError", "LatencyStats", "LossBreakdown",
    "LossWeights", "ModelConfig", "ModelMismatchError", "NumericError",
    "ParameterStore", "ParseError", "TrainConfig", "TrainState",
    "analysis_forward", "bpp", "checkpoint", "content_hash", "crop",
    "decode_image", "dequantize", "encode_image", "evaluate",
    "evaluate_detections", "fit", "freeze_cdf", "gdn1_forward",
    "igdn1_forward", "ingest_detections", "init_parameters", "init_state",
    "iou", "latency_bench", "likelihood", "load_dataset", "load_image",
    "load_store", "make_synthetic_dataset", "match_detections", "mse",
    "parse_annotations", "quantize_eval", "quantize_train", "rate_bits",
    "rate_precision_report", "rc_decode", "rc_encode", "region_mask",
    "rescale", "restore", "roi_loss", "roi_loss_batch", "round_half_away",
    "save_image", "save_store", "synthesis_forward", "total_loss",
    "train_epoch", "voc_ap", "write_synthetic_dataset",
]
