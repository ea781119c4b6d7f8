"""Part-level attention: mid-layer conv filters, clustered by how alike
their kernels are, act as weak part detectors.

Filters of the designated conv layer are grouped by spectral clustering of
their kernel-weight cosine similarity. Each group scores a patch by summing
its filters' strongest spatial responses; the best-scoring proposal per group
is that part's detection. One group inevitably collects background-tuned
filters; it is identified on held-out data and dropped from the features.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .classify import SvmConfig, svm_predict_batch, svm_train, top1_error
from .convnet import Conv, Network, extract_features_batch, forward_batch, to_net_input
from .imaging import Box, warp_patches_batch
from .numerics import sym_eigen, kmeans

__all__ = [
    "PartDetectorBank",
    "PartDetection",
    "PartFeatureTable",
    "filter_similarity_matrix",
    "affinity",
    "normalized_cut_value",
    "brute_force_min_ncut",
    "planted_partition",
    "spectral_cluster",
    "make_bank",
    "detection_score",
    "detect_parts",
    "part_feature",
    "collect_part_features",
    "identify_noise_cluster",
    "save_bank",
    "load_bank",
]

_DETECT_CHUNK = 64


@dataclass(frozen=True)
class PartDetectorBank:
    layer: int
    k: int
    assignment: tuple[int, ...]  # filter index -> group id
    noise_group: int | None = None

    def __post_init__(self):
        counts = np.bincount(np.asarray(self.assignment, dtype=np.int64), minlength=self.k)
        if len(counts) > self.k:
            raise ValueError("group id out of range")
        if (counts == 0).any():
            raise ValueError("every group must be non-empty")
        if self.noise_group is not None and not 0 <= self.noise_group < self.k:
            raise ValueError(f"noise group {self.noise_group} out of range")

    @property
    def live_groups(self) -> tuple[int, ...]:
        return tuple(g for g in range(self.k) if g != self.noise_group)


@dataclass(frozen=True)
class PartDetection:
    """Best patch per non-noise group, in ascending group-id order."""

    group_ids: tuple[int, ...]
    boxes: tuple[Box, ...]
    scores: tuple[float, ...]
    patches: tuple  # warped patch per group, net-input sized


@dataclass(frozen=True)
class PartFeatureTable:
    """Per image and per group: the best-scoring patch's fc feature, its box,
    and its detection score."""

    features: np.ndarray  # (n_images, k, feature_dim)
    labels: np.ndarray  # (n_images,)
    boxes: tuple  # per image, a k-tuple of Box
    scores: np.ndarray  # (n_images, k)

    def concat(self, groups) -> np.ndarray:
        return self.features[:, list(groups), :].reshape(self.features.shape[0], -1)


def filter_similarity_matrix(net: Network, layer: int) -> np.ndarray:
    """Pairwise cosine similarity of the layer's flattened kernels.

    Symmetric with unit diagonal, entries clipped to [-1, 1]; biases are not
    part of a filter's identity and are excluded.
    """
    if not 0 <= layer < len(net.spec.layers) or not isinstance(net.spec.layers[layer], Conv):
        raise ValueError(f"layer {layer} is not a conv layer")
    kernel = net.weights[layer][0]
    flat = kernel.reshape(-1, kernel.shape[-1]).T  # (filters, weights)
    norms = np.linalg.norm(flat, axis=1)
    if (norms == 0).any():
        raise ValueError("zero vector")
    unit = flat / norms[:, None]
    s = unit @ unit.T
    s = np.clip((s + s.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(s, 1.0)
    return s


def affinity(s: np.ndarray) -> np.ndarray:
    """Non-negative affinity used for clustering: similarities clamped at 0,
    diagonal restored to 1 so every node has positive degree."""
    a = np.maximum(np.asarray(s, dtype=np.float64), 0.0)
    np.fill_diagonal(a, 1.0)
    return a


def normalized_cut_value(s: np.ndarray, assignment) -> float:
    """Sum over groups of cut(g, rest) / vol(g) under the clustering
    affinity; empty groups are invalid."""
    a = affinity(s)
    d = a.sum(axis=1)
    assignment = np.asarray(assignment, dtype=np.int64)
    total = 0.0
    for g in np.unique(assignment):
        mask = assignment == g
        vol = d[mask].sum()
        within = a[np.ix_(mask, mask)].sum()
        total += (vol - within) / vol
    return float(total)


def brute_force_min_ncut(s: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """Exhaustive minimum normalized cut; reference oracle for small n.

    Enumerates all surjective assignments of n nodes into k groups (first
    node pinned to group 0) and returns (best assignment, best value).
    """
    a = affinity(s)
    n = a.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds {n} nodes")
    d = a.sum(axis=1)
    m = k ** (n - 1)
    codes = np.arange(m)
    digits = np.zeros((m, n), dtype=np.int64)
    for j in range(1, n):
        codes, digits[:, j] = np.divmod(codes, k)
    best_val, best = np.inf, None
    chunk = 1 << 15
    for start in range(0, m, chunk):
        block = digits[start : start + chunk]
        vals = np.zeros(block.shape[0])
        valid = np.ones(block.shape[0], dtype=bool)
        for g in range(k):
            mask = (block == g).astype(np.float64)
            vol = mask @ d
            within = ((mask @ a) * mask).sum(axis=1)
            nonempty = vol > 0
            valid &= nonempty
            vals += np.where(nonempty, (vol - within) / np.where(nonempty, vol, 1.0), 0.0)
        vals[~valid] = np.inf
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best = float(vals[i]), block[i].copy()
    return best, best_val


def planted_partition(rng, max_n: int = 12, k: int | None = None):
    """Random block-structured similarity matrix with known groups.

    Within-block entries are >= 0.8, cross-block <= 0.2, so the planted
    grouping is the unique minimum normalized cut; used to validate the
    spectral pipeline against the exhaustive oracle.
    """
    if k is None:
        k = int(rng.integers(2, 4))
    n = int(rng.integers(max(2 * k, 6), max_n + 1))
    sizes = np.full(k, 2)
    for _ in range(n - 2 * k):
        sizes[int(rng.integers(0, k))] += 1
    truth = np.repeat(np.arange(k), sizes)
    same = truth[:, None] == truth[None, :]
    hi = rng.uniform(0.8, 1.0, (n, n))
    lo = rng.uniform(0.0, 0.2, (n, n))
    s = np.where(same, hi, lo)
    s = np.triu(s, 1)
    s = s + s.T
    np.fill_diagonal(s, 1.0)
    return s, k, truth


def spectral_cluster(s: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Normalized-Laplacian spectral clustering of a similarity matrix.

    Negative similarities are clamped to zero and the diagonal is restored to
    one before computing degrees, so the affinity is non-negative and every
    node has positive degree. Rows of the k bottom eigenvectors are unit
    normalized and k-means (seeded) produces the assignment.
    """
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    if s.ndim != 2 or s.shape[1] != n:
        raise ValueError("similarity matrix must be square")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} not in [1, {n}]")
    a = affinity(s)
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    lap = np.eye(n) - dinv[:, None] * a * dinv[None, :]
    lap = (lap + lap.T) / 2.0
    _, vecs = sym_eigen(lap)
    emb = vecs[:, :k]
    norms = np.linalg.norm(emb, axis=1)
    emb = emb / np.maximum(norms, 1e-300)[:, None]
    return kmeans(emb, k, seed)


def make_bank(net: Network, k: int, seed: int, layer: int | None = None) -> PartDetectorBank:
    """Cluster the designated conv layer's filters into k part groups."""
    layer = net.spec.part_layer if layer is None else layer
    s = filter_similarity_matrix(net, layer)
    assignment = spectral_cluster(s, k, seed)
    return PartDetectorBank(layer, k, tuple(int(g) for g in assignment))


def _group_scores(net: Network, bank: PartDetectorBank, patches: np.ndarray) -> np.ndarray:
    """(n_patches, k) matrix: per group, the sum over member filters of each
    filter's rectified spatial max response at the bank layer."""
    member = np.zeros((len(bank.assignment), bank.k))
    member[np.arange(len(bank.assignment)), bank.assignment] = 1.0
    outs = []
    for start in range(0, patches.shape[0], _DETECT_CHUNK):
        act = forward_batch(net, patches[start : start + _DETECT_CHUNK], upto_layer=bank.layer)
        fmax = np.maximum(act, 0.0).max(axis=(1, 2))
        outs.append(fmax @ member)
    return np.concatenate(outs, axis=0)


def detection_score(net: Network, bank: PartDetectorBank, group: int, patch_img) -> float:
    if not 0 <= group < bank.k:
        raise ValueError(f"group {group} out of range")
    if group == bank.noise_group:
        raise ValueError(f"group {group} is the noise group")
    patch = np.asarray(patch_img, dtype=np.float64)[None]
    return float(_group_scores(net, bank, patch)[0, group])


def detect_parts(net: Network, bank: PartDetectorBank, img, proposals) -> PartDetection:
    """For each live group, the argmax-scoring proposal; score ties go to the
    earliest proposal. The image is 8-bit range; stored patches are the
    centered net inputs."""
    boxes = list(proposals.boxes)
    if not boxes:
        raise ValueError("empty proposals")
    h, w = net.spec.input_shape[:2]
    patches = to_net_input(warp_patches_batch(np.asarray(img, dtype=np.float64), boxes, h, w))
    scores = _group_scores(net, bank, patches)
    groups, best_boxes, best_scores, best_patches = [], [], [], []
    for g in bank.live_groups:
        i = int(np.argmax(scores[:, g]))
        groups.append(g)
        best_boxes.append(boxes[i])
        best_scores.append(float(scores[i, g]))
        best_patches.append(patches[i])
    return PartDetection(tuple(groups), tuple(best_boxes), tuple(best_scores), tuple(best_patches))


def part_feature(net: Network, detection: PartDetection) -> np.ndarray:
    """Concatenated fc features of the detected part patches, in group order."""
    if not detection.group_ids:
        raise ValueError("empty detection")
    feats = extract_features_batch(net, np.stack(detection.patches))
    return feats.reshape(-1)


def collect_part_features(
    net: Network, bank: PartDetectorBank, images, proposal_sets, labels
) -> PartFeatureTable:
    """Detection + feature extraction over a whole split, all k groups.

    Uses a noise-free view of the bank so the table covers every group; noise
    selection and final feature assembly both slice this table.
    """
    full = replace(bank, noise_group=None)
    rows, all_boxes, all_scores = [], [], []
    for img, props in zip(images, proposal_sets):
        det = detect_parts(net, full, img, props)
        rows.append(extract_features_batch(net, np.stack(det.patches)))
        all_boxes.append(det.boxes)
        all_scores.append(det.scores)
    return PartFeatureTable(
        np.stack(rows),
        np.asarray(labels, dtype=np.int64),
        tuple(all_boxes),
        np.asarray(all_scores),
    )


def identify_noise_cluster(
    bank: PartDetectorBank,
    train_table: PartFeatureTable,
    val_table: PartFeatureTable,
    svm_config: SvmConfig,
) -> int:
    """The group whose single-part classifier generalizes worst.

    Train one SVM per group on that group's features alone; the group with
    the lowest validation accuracy is the noise group (ties: lowest id).
    """
    if bank.k < 2:
        raise ValueError("cannot designate noise with one group")
    if val_table.features.shape[0] == 0:
        raise ValueError("empty validation set")
    worst, worst_acc = 0, np.inf
    for g in range(bank.k):
        model = svm_train(train_table.features[:, g, :], train_table.labels, svm_config)[0]
        preds = svm_predict_batch(model, val_table.features[:, g, :])
        acc = 1.0 - top1_error(preds, val_table.labels)
        if acc < worst_acc:
            worst, worst_acc = g, acc
    return worst


def save_bank(bank: PartDetectorBank) -> str:
    noise = "-" if bank.noise_group is None else str(bank.noise_group)
    groups = " ".join(str(g) for g in bank.assignment)
    return f"layer {bank.layer}\nk {bank.k}\nnoise {noise}\ngroups {groups}\n"


def load_bank(text: str) -> PartDetectorBank:
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        fields[key] = rest.strip()
    try:
        layer = int(fields["layer"])
        k = int(fields["k"])
        noise = None if fields["noise"] == "-" else int(fields["noise"])
        groups = tuple(int(t) for t in fields["groups"].split())
    except (KeyError, ValueError) as e:
        raise ValueError(f"malformed bank file: {e}") from None
    return PartDetectorBank(layer, k, groups, noise)
