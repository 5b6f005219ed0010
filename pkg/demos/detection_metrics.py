"""The evaluation side: greedy IoU matching, average precision from
first principles, and the latency harness that times codec calls.

Run as: python3 demos/detection_metrics.py
"""

import numpy as np

from arcodec.codec import CodecBundle, encode_image
from arcodec.data import make_synthetic_dataset
from arcodec.evaluation import (Detection, LatencyStats, evaluate_detections,
                                latency_bench, match_detections, voc_ap)
from arcodec.loss import BoundingBox
from arcodec.model import ModelConfig
from arcodec.trainer import init_state, refresh_table

# -- greedy matching -------------------------------------------------------------
# Detections are visited in confidence order; each claims the best-IoU
# still-unclaimed ground-truth box of its image, if any clears 0.5.

gt = [("img0", BoundingBox(10, 10, 20, 40)),
      ("img0", BoundingBox(50, 10, 20, 40))]
dets = [
    Detection("img0", BoundingBox(11, 11, 20, 40), 0.95),  # good hit
    Detection("img0", BoundingBox(12, 12, 20, 40), 0.90),  # same person again
    Detection("img0", BoundingBox(49, 11, 20, 40), 0.80),  # second person
    Detection("img0", BoundingBox(200, 200, 10, 10), 0.60),  # background
]
flags = match_detections(dets, gt)
for d, f in zip(dets, flags):
    print(f"confidence {d.confidence:.2f}: {'TP' if f else 'FP'}")
print("the duplicate is an FP: each ground-truth box is claimed once\n")

# -- average precision -------------------------------------------------------------
# Sweep the confidence threshold, trace precision over recall, take the
# area under the right-max envelope. The classic worked example:

ap = voc_ap([True, False, True], [0.9, 0.8, 0.7], num_gt=2)
print(f"TP, FP, TP over 2 ground truths -> AP = {ap:.4f} (= 5/6)")

result = evaluate_detections(dets, gt)
print(f"scene above: AP {result.ap:.3f}, {result.tp} TP, {result.fp} FP, "
      f"{result.num_gt} ground truths\n")

# Confidence ORDER is all that matters, and trailing weak FPs cannot
# improve the score:
same = voc_ap([True, False, True], [0.5, 0.4, 0.3], num_gt=2)
padded = voc_ap([True, False, True, False], [0.9, 0.8, 0.7, 0.1], num_gt=2)
print(f"rescaled confidences: AP {same:.4f} (unchanged)")
print(f"extra low-confidence FP: AP {padded:.4f} (never higher)\n")

# -- latency harness ---------------------------------------------------------------
# Each image is timed ten times after one untimed warm-up call, and all
# samples pool into one distribution. First on a fake clock that ticks
# one unit per reading, so the arithmetic is visible:

ticks = iter(range(10 ** 6))
stats = latency_bench(lambda _: None, ["a", "b", "c"],
                      timer=lambda: float(next(ticks)))
print(f"constant-time stub: {stats.samples} samples "
      f"(3 images x 10 repeats), min {stats.min:.0f} = mean {stats.mean:.0f}, "
      f"std {stats.std:.0f}")

# Then on the real encoder with a wall clock:
config = ModelConfig(width_n=8, hidden_layers_m=1, input_size=32)
scenes = make_synthetic_dataset(3, seed=2, size=32)
state = init_state(config, seed=0)
refresh_table(state, scenes)
bundle = CodecBundle.from_parts(config, state.params, state.table)

stats = latency_bench(lambda img: encode_image(img, bundle),
                      [rec.image for rec in scenes], repeats=10)
print(f"real encode, 32x32:  min {1000 * stats.min:.2f} ms, "
      f"mean {1000 * stats.mean:.2f} ms, std {1000 * stats.std:.2f} ms "
      f"over {stats.samples} samples")

summary = LatencyStats.from_samples([stats.mean] * 2)
assert summary.std == 0.0
print("report rows carry min/mean/std/samples, ready for the CSV writer")
