"""Rate-distortion training with region-inverted box losses.

One training step: analysis transform, additive-noise quantization,
rate estimate under the factorized bottleneck, unclamped synthesis,
then a distortion path computed on the reconstruction clamped to [0, 1]
(zero gradient outside the clamp). Hand-written backward passes feed an
Adam update. Every source of randomness reseeds from the train seed at
the start of each epoch, so epochs are identical under a zero learning
rate and resuming from a checkpoint reproduces an uninterrupted run
bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .bottleneck import (CdfTable, FactorizedEntropyModel, dequantize,
                         entropy_param_shapes, freeze_cdf, quantize_eval)
from .codec import CodecBundle, encode_image
from .data import AnnotatedImage
from .errors import ConfigurationError, InputError, NumericError
from .loss import (HBOX, VBOX, LossBreakdown, LossWeights, crop, mse,
                   roi_loss_grad, total_loss)
from .model import (ModelConfig, ParameterStore, analysis_backward,
                    analysis_forward, analysis_train, init_parameters,
                    save_store, load_store, synthesis_forward, synthesis_train,
                    synthesis_backward, transform_param_shapes)

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Optimization hyperparameters."""

    weights: LossWeights = field(default_factory=LossWeights)
    epochs: int = 1
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if not self.learning_rate >= 0.0:
            raise ConfigurationError("learning_rate must be non-negative")
        if self.checkpoint_interval < 0:
            raise ConfigurationError("checkpoint_interval must be >= 0")


class AdamState:
    """First/second moment estimates per parameter plus the step count."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def update(self, params: ParameterStore, grads: dict[str, np.ndarray],
               lr: float) -> None:
        self.step += 1
        b1c = 1.0 - _ADAM_BETA1 ** self.step
        b2c = 1.0 - _ADAM_BETA2 ** self.step
        for name in sorted(grads):
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name] = _ADAM_BETA1 * self.m[name] + (1.0 - _ADAM_BETA1) * g
            v = self.v[name] = _ADAM_BETA2 * self.v[name] + (1.0 - _ADAM_BETA2) * (g * g)
            params[name] = params[name] - lr * (m / b1c) / (np.sqrt(v / b2c) + _ADAM_EPS)


@dataclass
class TrainState:
    """Everything the trainer mutates: weights, optimizer, epoch, table."""

    config: ModelConfig
    params: ParameterStore
    adam: AdamState
    epoch: int = 0
    table: CdfTable | None = None

    @property
    def entropy(self) -> FactorizedEntropyModel:
        return FactorizedEntropyModel(self.config.width_n, self.params)


def init_state(config: ModelConfig, seed: int = 0) -> TrainState:
    params = init_parameters(config, seed)
    FactorizedEntropyModel.init_params(
        params, config.width_n, np.random.default_rng([seed, 1]))
    return TrainState(config=config, params=params, adam=AdamState())


def _check_dataset(dataset, config: ModelConfig) -> None:
    if not dataset:
        raise InputError("dataset is empty")
    shape = dataset[0].image.shape
    for rec in dataset:
        if rec.image.shape != shape:
            raise InputError(
                f"all images must share one shape; {rec.image_id!r} has "
                f"{rec.image.shape}, expected {shape}")
    config.latent_spatial(shape[1], shape[2])


def _train_step(state: TrainState, xs: np.ndarray, hboxes, vboxes,
                tconfig: TrainConfig, rng: np.random.Generator) -> LossBreakdown:
    params, config, weights = state.params, state.config, tconfig.weights
    entropy = state.entropy
    batch, _, height, width = xs.shape
    pixels = height * width

    y, enc_caches = analysis_train(xs, params, config)
    y_tilde = y + rng.uniform(-0.5, 0.5, size=y.shape)
    bits, rate_cache = entropy.rate_forward(y_tilde)
    x_raw, dec_caches = synthesis_train(y_tilde, params, config)
    x_hat = np.clip(x_raw, 0.0, 1.0)

    breakdown = total_loss(bits / pixels, xs, x_hat, hboxes, vboxes, weights)

    grads: dict[str, np.ndarray] = {}
    d_xhat = weights.lambda_bg * 2.0 * (x_hat - xs) / xs.size
    n_hbox = sum(len(b) for b in hboxes)
    n_vbox = sum(len(b) for b in vboxes)
    for i in range(batch):
        if hboxes[i] and n_hbox:
            d_xhat[i] += weights.lambda_hbox * roi_loss_grad(
                xs[i], x_hat[i], hboxes[i], k=1, pool_count=n_hbox)
        if vboxes[i] and n_vbox:
            d_xhat[i] += weights.lambda_vbox * roi_loss_grad(
                xs[i], x_hat[i], vboxes[i], k=0, pool_count=n_vbox)
    d_raw = np.where((x_raw >= 0.0) & (x_raw <= 1.0), d_xhat, 0.0)
    d_ytilde = synthesis_backward(d_raw, dec_caches, grads)
    d_bits = np.full(batch, weights.lambda_r / (pixels * batch))
    d_ytilde = d_ytilde + entropy.rate_backward(d_bits, rate_cache, grads)
    analysis_backward(d_ytilde, enc_caches, grads)

    state.adam.update(params, grads, tconfig.learning_rate)
    for name in grads:
        if not np.isfinite(params[name]).all():
            raise NumericError(f"parameter {name!r} became non-finite")
    return breakdown


def train_epoch(state: TrainState, dataset: list[AnnotatedImage],
                tconfig: TrainConfig) -> tuple[TrainState, LossBreakdown]:
    """One pass over the dataset; returns the image-weighted mean breakdown.

    Aborts with NumericError naming the component and batch index the
    moment any loss component or parameter goes non-finite.
    """
    _check_dataset(dataset, state.config)
    rng = np.random.default_rng(tconfig.seed)
    order = rng.permutation(len(dataset))
    sums = np.zeros(5)
    seen = 0
    for batch_idx, start in enumerate(range(0, len(order), tconfig.batch_size)):
        chunk = order[start:start + tconfig.batch_size]
        xs = np.stack([dataset[j].image for j in chunk])
        hb = [dataset[j].boxes_with_role(HBOX) for j in chunk]
        vb = [dataset[j].boxes_with_role(VBOX) for j in chunk]
        try:
            bd = _train_step(state, xs, hb, vb, tconfig, rng)
        except NumericError as exc:
            raise NumericError(
                f"training aborted at epoch {state.epoch}, batch {batch_idx}: "
                f"{exc}") from exc
        n = len(chunk)
        sums += n * np.array([bd.rate, bd.bg, bd.hbox, bd.vbox, bd.total])
        seen += n
    state.epoch += 1
    mean = sums / seen
    return state, LossBreakdown(rate=float(mean[0]), bg=float(mean[1]),
                                hbox=float(mean[2]), vbox=float(mean[3]),
                                total=float(mean[4]))


def latent_stats(state: TrainState,
                 dataset: list[AnnotatedImage]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel (min, max) of the continuous latents over a dataset."""
    _check_dataset(dataset, state.config)
    lo = np.full(state.config.width_n, np.inf)
    hi = np.full(state.config.width_n, -np.inf)
    for rec in dataset:
        y = analysis_forward(rec.image, state.params, state.config)
        lo = np.minimum(lo, y.min(axis=(1, 2)))
        hi = np.maximum(hi, y.max(axis=(1, 2)))
    return lo, hi


def refresh_table(state: TrainState,
                  dataset: list[AnnotatedImage]) -> CdfTable:
    """Freeze the entropy model against a calibration dataset."""
    state.table = freeze_cdf(state.entropy, latent_stats(state, dataset))
    return state.table


def evaluate(state: TrainState, dataset: list[AnnotatedImage],
             weights: LossWeights | None = None
             ) -> tuple[LossBreakdown, float]:
    """Deployment-mode metrics: re-freezes the table, encodes real
    bitstreams, and scores the decoded reconstructions.

    Returns (mean LossBreakdown, mean bits per pixel measured from the
    assembled bitstreams). Parameters are not mutated.
    """
    _check_dataset(dataset, state.config)
    weights = weights or LossWeights()
    entropy = state.entropy
    table = freeze_cdf(entropy, latent_stats(state, dataset))
    bundle = CodecBundle.from_parts(state.config, state.params, table)

    rate_sum = 0.0
    bg_sum = 0.0
    bpp_sum = 0.0
    hbox_terms: list[float] = []
    vbox_terms: list[float] = []
    for rec in dataset:
        height, width = rec.image.shape[1], rec.image.shape[2]
        y = analysis_forward(rec.image, state.params, state.config)
        symbols = quantize_eval(y, table.offsets)
        stream = encode_image(rec.image, bundle)
        y_hat = dequantize(symbols, table.offsets)
        x_hat = synthesis_forward(y_hat, state.params, state.config, clamp=True)
        p = entropy.likelihood_values(y_hat.reshape(y_hat.shape[0], -1))
        rate_sum += float(-np.log2(p).sum()) / (height * width)
        bg_sum += mse(rec.image, x_hat)
        bpp_sum += 8.0 * len(stream) / (height * width)
        for b in rec.boxes_with_role(HBOX):
            hbox_terms.append(1.0 - mse(crop(rec.image, b), crop(x_hat, b)))
        for b in rec.boxes_with_role(VBOX):
            vbox_terms.append(mse(crop(rec.image, b), crop(x_hat, b)))
    n = len(dataset)
    breakdown = LossBreakdown.combine(
        rate_sum / n, bg_sum / n,
        float(np.mean(hbox_terms)) if hbox_terms else 0.0,
        float(np.mean(vbox_terms)) if vbox_terms else 0.0,
        weights)
    return breakdown, bpp_sum / n


# ---------------------------------------------------------------------------
# checkpointing


def checkpoint(state: TrainState, path) -> int:
    """Write weights, optimizer state, frozen table (if any) and epoch."""
    store = state.params.copy()
    for name, arr in state.adam.m.items():
        store[f"opt.m.{name}"] = arr
    for name, arr in state.adam.v.items():
        store[f"opt.v.{name}"] = arr
    if state.table is not None:
        store.update(state.table.to_arrays("cdf"))
    meta = {"epoch": state.epoch, "adam_step": state.adam.step}
    return save_store(path, store, state.config, meta)


def _expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = transform_param_shapes(config)
    shapes.update(entropy_param_shapes(config.width_n))
    return shapes


def restore(path) -> TrainState:
    """Rebuild a TrainState from a checkpoint.

    Array shapes are validated against the stored ModelConfig; any
    mismatch raises ConfigurationError instead of silently reshaping.
    """
    store, config, meta = load_store(path)
    params = store.without(("opt.", "cdf."))
    expected = _expected_shapes(config)
    for name, shape in expected.items():
        if name not in params:
            raise ConfigurationError(f"checkpoint is missing parameter {name!r}")
        if params[name].shape != shape:
            raise ConfigurationError(
                f"checkpoint parameter {name!r} has shape "
                f"{params[name].shape}, expected {shape} for this config")
    extra = [n for n in params.names() if n not in expected]
    if extra:
        raise ConfigurationError(f"checkpoint carries unknown arrays {extra}")
    adam = AdamState()
    adam.step = int(meta.get("adam_step", 0))
    for name, arr in store.subset("opt.m.").items():
        adam.m[name[len("opt.m."):]] = arr.copy()
    for name, arr in store.subset("opt.v.").items():
        adam.v[name[len("opt.v."):]] = arr.copy()
    table = None
    if "cdf.offsets" in store:
        table = CdfTable.from_arrays(store, "cdf")
    return TrainState(config=config, params=params, adam=adam,
                      epoch=int(meta.get("epoch", 0)), table=table)


LOG_COLUMNS = ("epoch", "rate", "bg", "hbox", "vbox", "total", "val_bpp")


def fit(state: TrainState, dataset: list[AnnotatedImage],
        tconfig: TrainConfig, log_path=None, val_dataset=None,
        checkpoint_path=None) -> tuple[TrainState, list[LossBreakdown]]:
    """Run tconfig.epochs epochs with CSV logging and checkpointing.

    The val_bpp column is filled on evaluation epochs (checkpoint
    interval hits and the final epoch) and left blank otherwise; the
    evaluation set defaults to the training set.
    """
    history: list[LossBreakdown] = []
    rows = []
    eval_set = val_dataset if val_dataset is not None else dataset
    for i in range(tconfig.epochs):
        state, bd = train_epoch(state, dataset, tconfig)
        history.append(bd)
        last = i == tconfig.epochs - 1
        interval_hit = (tconfig.checkpoint_interval
                        and (i + 1) % tconfig.checkpoint_interval == 0)
        val_bpp = ""
        if last or interval_hit:
            _, mean_bpp = evaluate(state, eval_set, tconfig.weights)
            val_bpp = f"{mean_bpp:.6f}"
            refresh_table(state, dataset)
            if checkpoint_path is not None:
                checkpoint(state, checkpoint_path)
        rows.append((state.epoch, bd.rate, bd.bg, bd.hbox, bd.vbox, bd.total,
                     val_bpp))
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_COLUMNS)
            writer.writerows(rows)
    return state, history
