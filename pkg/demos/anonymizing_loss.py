"""The inverted box loss and why it anonymizes: the head-region term
rewards reconstruction error instead of penalizing it, so gradient
descent actively pushes head pixels away from the original.

Run as: python3 demos/anonymizing_loss.py
"""

import numpy as np

from arcodec.loss import (BoundingBox, LossWeights, crop, mse, roi_loss,
                          roi_loss_grad, total_loss)

rng = np.random.default_rng(3)

# -- two readings of the same crop ---------------------------------------------
# For a box b the per-box term is  k + (-1)^k * mse(crop(x), crop(xhat)).
# k=0 is ordinary distortion; k=1 flips the sign and shifts by one, so
# the two always sum to exactly 1 on the same box.

x = rng.uniform(size=(3, 16, 16))
xhat = rng.uniform(size=(3, 16, 16))
head = BoundingBox(4, 2, 6, 5)

keep = roi_loss(x, xhat, [head], k=0)
erase = roi_loss(x, xhat, [head], k=1)
print(f"k=0 (penalize error inside the box):    {keep:.4f}")
print(f"k=1 (reward error inside the box):      {erase:.4f}")
print(f"complement: {keep:.4f} + {erase:.4f} = {keep + erase:.1f}\n")

# Minimizing the k=1 term means MAXIMIZING the mse inside the box. With
# x and xhat in [0, 1] the term stays in [0, 1], so it cannot run away.

# -- what the gradient asks for --------------------------------------------------
# Inside the head box the k=1 gradient points xhat away from x; outside
# it is exactly zero. A k=0 person box pulls toward x as usual.

g_head = roi_loss_grad(x, xhat, [head], k=1)
inside = crop(g_head, head)
step = -inside  # descent moves opposite the gradient
away = np.sign(step) == np.sign(crop(xhat, head) - crop(x, head))
print(f"gradient zero outside the box: "
      f"{np.count_nonzero(g_head) == inside.size}")
print(f"inside, the descent step points away from x at "
      f"{100 * away.mean():.0f}% of pixels: each update makes the head")
print("reconstruction worse while everything else improves\n")

# -- the assembled objective ------------------------------------------------------
# rate + bg + person boxes pull toward fidelity; the head term pushes
# the other way, weighted lambda = (0.04, 1, 0.6, 1).

person = BoundingBox(3, 1, 9, 13)
weights = LossWeights()
bd = total_loss(rate=0.8, x=x, xhat=xhat, hboxes=[head], vboxes=[person],
                weights=weights)
print(f"rate {bd.rate:.3f} | bg {bd.bg:.4f} | head {bd.hbox:.4f} | "
      f"person {bd.vbox:.4f} -> total {bd.total:.4f}")
print(f"weights: rate {weights.lambda_r}, bg {weights.lambda_bg}, "
      f"head {weights.lambda_hbox}, person {weights.lambda_vbox}")

# A perfect reconstruction is NOT the minimizer. Take the exact copy and
# invert just the head pixels: the background and person penalties rise a
# little, the head term falls a lot, and the objective drops.
perfect = total_loss(rate=0.8, x=x, xhat=x.copy(), hboxes=[head],
                     vboxes=[person], weights=weights)
scrambled = x.copy()
y0, y1, x0, x1 = head.pixel_region()
scrambled[:, y0:y1, x0:x1] = 1.0 - scrambled[:, y0:y1, x0:x1]
wrong_head = total_loss(rate=0.8, x=x, xhat=scrambled, hboxes=[head],
                        vboxes=[person], weights=weights)
print(f"\nperfect copy:          total {perfect.total:.4f} "
      f"(head term {perfect.hbox:.2f}, the worst value)")
print(f"copy with head inverted: total {wrong_head.total:.4f} "
      f"(head term {wrong_head.hbox:.2f})")
print("wrecking the head strictly improves the objective: anonymization")
print("is built into what the training minimizes")
