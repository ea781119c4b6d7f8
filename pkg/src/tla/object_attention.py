"""Object-level attention: keep the proposals a patch scorer believes in.

A small net trained on superordinate labels scores every candidate patch by
the softmax mass it assigns to the relevant parent classes; patches above a
confidence threshold survive. The survivors both train the fine-grained
classifier and, at test time, vote by averaging their softmax outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convnet import Network, forward_batch, to_net_input
from .imaging import Box, warp_patches_batch

__all__ = [
    "SelectedPatches",
    "MIN_PATCH_AREA",
    "filter_confidence",
    "select_patches",
    "predict_multiview",
]

# warping anything smaller than 8x8 to net input yields smear, not signal
MIN_PATCH_AREA = 64

_SCORE_CHUNK = 64


@dataclass(frozen=True)
class SelectedPatches:
    """Kept (box, confidence) pairs, confidence descending; ties keep
    proposal order."""

    boxes: tuple[Box, ...]
    scores: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.boxes)


def _parent_indices(parents, class_count: int) -> np.ndarray:
    idx = np.asarray(sorted(set(int(c) for c in parents)), dtype=np.int64)
    if idx.size == 0:
        raise ValueError("empty parent class set")
    if idx.min() < 0 or idx.max() >= class_count:
        raise ValueError(f"parent class index out of range for {class_count} classes")
    return idx


def _batched_probs(net: Network, patches: np.ndarray) -> np.ndarray:
    outs = []
    for start in range(0, patches.shape[0], _SCORE_CHUNK):
        outs.append(forward_batch(net, patches[start : start + _SCORE_CHUNK]))
    return np.concatenate(outs, axis=0)


def filter_confidence(filternet: Network, patch_img, parents) -> float:
    """Softmax mass the scorer puts on the parent classes; in [0, 1].

    patch_img must already be net-ready (warped and centered)."""
    idx = _parent_indices(parents, filternet.spec.class_count)
    probs = forward_batch(filternet, np.asarray(patch_img, dtype=np.float64)[None])[0]
    return float(probs[idx].sum())


def score_boxes(filternet: Network, img, boxes, parents) -> np.ndarray:
    """Confidence for each box of one 8-bit-range image, batched; patches are
    warped to net size and centered with to_net_input before scoring."""
    idx = _parent_indices(parents, filternet.spec.class_count)
    if not boxes:
        return np.zeros(0)
    h, w = filternet.spec.input_shape[:2]
    patches = to_net_input(warp_patches_batch(np.asarray(img, dtype=np.float64), boxes, h, w))
    probs = _batched_probs(filternet, patches)
    return probs[:, idx].sum(axis=1)


def select_patches(
    filternet: Network,
    img,
    proposals,
    parents,
    threshold: float = 0.9,
    max_count: int | None = 40,
) -> SelectedPatches:
    """Score every viable proposal, keep those at or above threshold,
    best first."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0,1]")
    boxes = [b for b in proposals.boxes if b.area >= MIN_PATCH_AREA]
    if not boxes:
        return SelectedPatches((), ())
    conf = score_boxes(filternet, img, boxes, parents)
    keep = np.flatnonzero(conf >= threshold)
    order = keep[np.argsort(-conf[keep], kind="stable")]
    if max_count is not None:
        order = order[:max_count]
    return SelectedPatches(
        tuple(boxes[i] for i in order),
        tuple(float(conf[i]) for i in order),
    )


def predict_multiview(domainnet: Network, patches) -> np.ndarray:
    """Mean softmax over the given patches.

    Each class column is summed in sorted order, so the result is bit-exact
    under any permutation of the patch list.
    """
    if len(patches) == 0:
        raise ValueError("no patches")
    xs = np.stack([np.asarray(p, dtype=np.float64) for p in patches])
    probs = _batched_probs(domainnet, xs)
    cols = np.sort(probs, axis=0)
    return cols.sum(axis=0) / probs.shape[0]
