"""Synthetic segmentation samples: colored shapes on contrasting
backgrounds, with unaries corrupted at a controllable noise rate.

Desk-scale stand-in for a real dataset: ground truth is the shape mask
(label 1) vs background (label 0); the unary field is the log of a label
indicator whose argmax is flipped to a wrong label on roughly
`noise_rate` of the pixels, softened so refinement can recover them.
"""

from __future__ import annotations

import numpy as np

from .training import Sample

__all__ = ["synth_dataset"]

# Soft indicator mass left on the non-argmax labels; keeps the wrong
# pixels recoverable by the pairwise term.
_SOFTNESS = 0.35


def _random_shape_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=np.int64)
    if rng.random() < 0.5:
        # rectangle
        y0 = rng.integers(0, h // 2)
        x0 = rng.integers(0, w // 2)
        y1 = rng.integers(y0 + max(2, h // 4), h)
        x1 = rng.integers(x0 + max(2, w // 4), w)
        mask[y0:y1, x0:x1] = 1
    else:
        # disk
        cy = rng.uniform(h * 0.3, h * 0.7)
        cx = rng.uniform(w * 0.3, w * 0.7)
        r = rng.uniform(min(h, w) * 0.2, min(h, w) * 0.4)
        ys, xs = np.mgrid[0:h, 0:w]
        mask[(ys - cy) ** 2 + (xs - cx) ** 2 <= r * r] = 1
    return mask


def synth_dataset(seed: int, n_samples: int, height: int, width: int,
                  noise_rate: float) -> list[Sample]:
    """Deterministic list of samples for the given seed."""
    if not (0.0 <= noise_rate < 1.0):
        raise ValueError("noise_rate must lie in [0, 1)")
    if height < 4 or width < 4:
        raise ValueError("image sides must be at least 4 pixels")
    rng = np.random.default_rng(seed)
    n_labels = 2
    samples = []
    for _ in range(n_samples):
        mask = _random_shape_mask(rng, height, width)
        # contrasting colors, mild per-pixel jitter
        bg = rng.uniform(0, 100, size=3)
        fg = rng.uniform(155, 255, size=3)
        if rng.random() < 0.5:
            bg, fg = fg, bg
        image = np.where(mask[:, :, None] == 1, fg[None, None, :], bg[None, None, :])
        image = image + rng.normal(0, 6.0, size=image.shape)
        image = np.clip(image, 0, 255)

        gt = mask
        labels = gt.ravel().copy()
        n = labels.size
        if noise_rate > 0:
            flip = rng.random(n) < noise_rate
            wrong = (labels[flip] + rng.integers(1, n_labels, size=int(flip.sum()))) % n_labels
            labels[flip] = wrong
        indicator = np.full((n, n_labels), _SOFTNESS / n_labels)
        indicator[np.arange(n), labels] += 1.0 - _SOFTNESS
        unary = np.log(indicator)
        samples.append(Sample(image=image, unary=unary, ground_truth=gt))
    return samples
