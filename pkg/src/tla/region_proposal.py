"""Bottom-up region proposals: graph-based over-segmentation followed by
hierarchical grouping of the most similar adjacent regions.

The proposal set is every bounding box the hierarchy ever forms (initial
segments plus each merge), deduplicated, which gives the high-recall /
low-precision patch pool both attention levels consume.

Images here are in the 8-bit 0..255 range; the segmentation thresholds and
histogram bin edges assume that scale.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .imaging import Box

__all__ = [
    "ProposalParams",
    "Segmentation",
    "RegionDescriptor",
    "ProposalSet",
    "felzenszwalb_segment",
    "region_features",
    "selective_search",
]

HIST_BINS = 25


@dataclass(frozen=True)
class ProposalParams:
    scale_k: float = 100.0
    sigma: float = 0.8
    min_size: int = 20
    w_color: float = 1.0
    w_size: float = 1.0
    w_fill: float = 1.0


@dataclass
class Segmentation:
    label_map: np.ndarray  # (H, W) int labels, contiguous 0..region_count-1
    region_count: int


@dataclass
class RegionDescriptor:
    pixel_count: int
    box: Box
    hist: np.ndarray  # (C, HIST_BINS), each channel row sums to 1


@dataclass
class ProposalSet:
    boxes: list[Box]
    initial_region_count: int
    merge_count: int


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


def _gaussian_smooth(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img
    radius = max(1, int(np.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(t * t) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()

    def along(a, axis):
        pad = [(0, 0)] * a.ndim
        pad[axis] = (radius, radius)
        ap = np.pad(a, pad, mode="reflect")
        out = np.zeros_like(a)
        for i, kv in enumerate(kernel):
            sl = [slice(None)] * a.ndim
            sl[axis] = slice(i, i + a.shape[axis])
            out += kv * ap[tuple(sl)]
        return out

    return along(along(img, 0), 1)


def _grid_edges(h: int, w: int, smooth: np.ndarray):
    """4-neighbor edges (right, then down; row-major) with color-distance weights."""
    idx = np.arange(h * w).reshape(h, w)
    hor_a = idx[:, :-1].ravel()
    hor_b = idx[:, 1:].ravel()
    ver_a = idx[:-1, :].ravel()
    ver_b = idx[1:, :].ravel()
    flat = smooth.reshape(h * w, -1)
    ea = np.concatenate([hor_a, ver_a])
    eb = np.concatenate([hor_b, ver_b])
    d = flat[ea] - flat[eb]
    weights = np.sqrt(np.einsum("nc,nc->n", d, d))
    return ea, eb, weights


def felzenszwalb_segment(
    img, scale_k: float = 100.0, sigma: float = 0.8, min_size: int = 20
) -> Segmentation:
    """Graph-based segmentation on the 4-neighbor pixel graph.

    After Gaussian smoothing, edges are processed in ascending weight order;
    two components merge when the edge weight is at most each component's
    internal-difference threshold, which starts at scale_k and relaxes as
    tau(R) = scale_k / |R|. Regions below min_size are then absorbed into
    their most similar neighbor (the smallest-weight edge out, because the
    cleanup pass also runs in ascending order).
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    h, w, _ = a.shape
    if h * w == 0:
        raise ValueError("empty image")

    smooth = _gaussian_smooth(a, sigma)
    ea, eb, weights = _grid_edges(h, w, smooth)
    order = np.argsort(weights, kind="stable")

    uf = _UnionFind(h * w)
    threshold = np.full(h * w, float(scale_k))
    ea_l, eb_l, w_l = ea.tolist(), eb.tolist(), weights.tolist()
    for ei in order.tolist():
        ra = uf.find(ea_l[ei])
        rb = uf.find(eb_l[ei])
        if ra == rb:
            continue
        wt = w_l[ei]
        if wt <= threshold[ra] and wt <= threshold[rb]:
            root = uf.union(ra, rb)
            threshold[root] = wt + scale_k / uf.size[root]

    # absorb undersized regions along ascending edges until none remain
    changed = True
    while changed:
        changed = False
        for ei in order.tolist():
            ra = uf.find(ea_l[ei])
            rb = uf.find(eb_l[ei])
            if ra != rb and (uf.size[ra] < min_size or uf.size[rb] < min_size):
                uf.union(ra, rb)
                changed = True

    roots = np.fromiter((uf.find(i) for i in range(h * w)), dtype=np.int64, count=h * w)
    _, labels = np.unique(roots, return_inverse=True)
    # relabel in raster order of first occurrence for determinism
    first = {}
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    nxt = 0
    for lab in labels.tolist():
        if lab not in first:
            first[lab] = nxt
            remap[lab] = nxt
            nxt += 1
    label_map = remap[labels].reshape(h, w)
    return Segmentation(label_map=label_map, region_count=nxt)


def region_features(img, seg: Segmentation) -> list[RegionDescriptor]:
    """Per-region pixel count, tight bounding box, and color histogram."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    h, w, c = a.shape
    labels = seg.label_map.ravel()
    r = seg.region_count

    counts = np.bincount(labels, minlength=r)
    bins = np.clip(
        (a.reshape(-1, c) * (HIST_BINS / 256.0)).astype(np.int64), 0, HIST_BINS - 1
    )
    chan = np.arange(c)[None, :]
    combined = labels[:, None] * (c * HIST_BINS) + chan * HIST_BINS + bins
    hist = np.bincount(combined.ravel(), minlength=r * c * HIST_BINS).astype(np.float64)
    hist = hist.reshape(r, c, HIST_BINS)
    hist /= counts[:, None, None]

    ys, xs = np.divmod(np.arange(h * w), w)
    x_min = np.full(r, w, dtype=np.int64)
    x_max = np.full(r, -1, dtype=np.int64)
    y_min = np.full(r, h, dtype=np.int64)
    y_max = np.full(r, -1, dtype=np.int64)
    np.minimum.at(x_min, labels, xs)
    np.maximum.at(x_max, labels, xs)
    np.minimum.at(y_min, labels, ys)
    np.maximum.at(y_max, labels, ys)

    out = []
    for i in range(r):
        box = Box(
            int(x_min[i]),
            int(y_min[i]),
            int(x_max[i] - x_min[i] + 1),
            int(y_max[i] - y_min[i] + 1),
        )
        out.append(RegionDescriptor(int(counts[i]), box, hist[i]))
    return out


def _merge_box(a: Box, b: Box) -> Box:
    x0 = min(a.x, b.x)
    y0 = min(a.y, b.y)
    x1 = max(a.x + a.w, b.x + b.w)
    y1 = max(a.y + a.h, b.y + b.h)
    return Box(x0, y0, x1 - x0, y1 - y0)


def merge_descriptors(a: RegionDescriptor, b: RegionDescriptor) -> RegionDescriptor:
    """Size-weighted combination; equals recomputing the merged region from pixels."""
    n = a.pixel_count + b.pixel_count
    hist = (a.hist * a.pixel_count + b.hist * b.pixel_count) / n
    return RegionDescriptor(n, _merge_box(a.box, b.box), hist)


def _similarity(a: RegionDescriptor, b: RegionDescriptor, area: int, p: ProposalParams) -> float:
    color = float(np.minimum(a.hist, b.hist).sum())
    size_sim = 1.0 - (a.pixel_count + b.pixel_count) / area
    merged = _merge_box(a.box, b.box)
    fill_sim = 1.0 - (merged.area - a.pixel_count - b.pixel_count) / area
    return p.w_color * color + p.w_size * size_sim + p.w_fill * fill_sim


def selective_search(img, params: ProposalParams = ProposalParams()) -> ProposalSet:
    """Hierarchical grouping over the base segmentation.

    Repeatedly merges the most similar adjacent pair (ties broken by the
    lowest region-id pair) until one region covers the image, emitting the
    bounding box of every region ever formed. R initial regions produce
    exactly R-1 merges and at most 2R-1 boxes before deduplication.
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    h, w, _ = a.shape
    area = h * w

    seg = felzenszwalb_segment(a, params.scale_k, params.sigma, params.min_size)
    descs = {i: d for i, d in enumerate(region_features(a, seg))}
    r0 = seg.region_count

    lm = seg.label_map
    pairs = set()
    horiz = np.stack([lm[:, :-1].ravel(), lm[:, 1:].ravel()], axis=1)
    vert = np.stack([lm[:-1, :].ravel(), lm[1:, :].ravel()], axis=1)
    for pa, pb in np.concatenate([horiz, vert]).tolist():
        if pa != pb:
            pairs.add((min(pa, pb), max(pa, pb)))

    neighbors: dict[int, set[int]] = {i: set() for i in range(r0)}
    for pa, pb in pairs:
        neighbors[pa].add(pb)
        neighbors[pb].add(pa)

    heap = []
    for pa, pb in sorted(pairs):
        sim = _similarity(descs[pa], descs[pb], area, params)
        heapq.heappush(heap, (-sim, pa, pb))

    boxes = [descs[i].box for i in range(r0)]
    alive = set(range(r0))
    next_id = r0
    merges = 0
    while len(alive) > 1:
        while True:
            neg_sim, pa, pb = heapq.heappop(heap)
            if pa in alive and pb in alive and pb in neighbors[pa]:
                break
        merged = merge_descriptors(descs[pa], descs[pb])
        new_id = next_id
        next_id += 1
        merges += 1
        alive.discard(pa)
        alive.discard(pb)
        alive.add(new_id)
        descs[new_id] = merged
        boxes.append(merged.box)

        new_nbrs = (neighbors[pa] | neighbors[pb]) - {pa, pb}
        neighbors[new_id] = new_nbrs
        for nb in new_nbrs:
            neighbors[nb].discard(pa)
            neighbors[nb].discard(pb)
            neighbors[nb].add(new_id)
        del neighbors[pa], neighbors[pb], descs[pa], descs[pb]
        for nb in sorted(new_nbrs):
            sim = _similarity(descs[new_id], descs[nb], area, params)
            lo, hi = min(new_id, nb), max(new_id, nb)
            heapq.heappush(heap, (-sim, lo, hi))

    seen = set()
    unique = []
    for b in boxes:
        if b not in seen:
            seen.add(b)
            unique.append(b)
    return ProposalSet(boxes=unique, initial_region_count=r0, merge_count=merges)
