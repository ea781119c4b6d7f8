"""Synthetic fine-grained benchmark and the end-to-end experiment driver.

The generator plants one object per image (a superclass-shared silhouette at
random position and scale) carrying small saturated part motifs that are the
only cue separating fine classes, over muted clutter. Ground-truth boxes are
recorded for metrics but no training path reads them; training sees only
(image, label) pairs.

The driver reproduces the method ladder: two whole-image baselines, the
object-attention stream, the part-attention stream, and their fusion, all
from one master seed. Every stage derives its own seed, so stages can be run
separately and still agree bit for bit with a single end-to-end run.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classify import (
    FusionConfig,
    SvmConfig,
    fuse,
    load_svm,
    save_svm,
    svm_predict_batch,
    svm_train,
    top1_error,
    tune_alpha,
)
from .config import Config, config_hash, default_config
from .convnet import (
    TrainConfig,
    init_network,
    load_net,
    mini_domainnet_spec,
    save_net,
    small_filternet_spec,
    to_net_input,
    train,
)
from .imaging import Box, box_iou, resize_bilinear, ten_views, warp_patches_batch, write_ppm
from .object_attention import predict_multiview, select_patches
from .part_attention import (
    collect_part_features,
    identify_noise_cluster,
    load_bank,
    make_bank,
    save_bank,
)
from .region_proposal import ProposalParams, selective_search

__all__ = [
    "SyntheticSpec",
    "Sample",
    "SyntheticDataset",
    "PipelineResult",
    "PipelineError",
    "derive_seed",
    "motif_color",
    "gen_synthetic",
    "write_dataset",
    "spec_from_config",
    "run_baseline_domain",
    "run_baseline_multitask",
    "run_pipeline",
]

FILTERNET_SIZE = 32
DOMAIN_SIZE = 48  # patch warp target; smaller than the images so zoomed parts gain detail

# saturated motif palette; clutter only ever gets washed-out versions
PALETTE = np.array(
    [
        [230, 40, 40],
        [235, 140, 30],
        [235, 225, 40],
        [50, 200, 60],
        [40, 210, 215],
        [45, 80, 230],
        [150, 50, 220],
        [230, 60, 200],
    ],
    dtype=np.int64,
)

_CANVAS = 225
_BODY = ((112, 120, 152), (150, 132, 108))  # per silhouette shape, class-neutral
# unit-square anchor slots per silhouette, chosen to sit on the body
_SLOTS = (
    ((0.30, 0.35), (0.70, 0.35), (0.32, 0.68), (0.68, 0.68)),  # ellipse
    ((0.38, 0.58), (0.62, 0.58), (0.32, 0.80), (0.68, 0.80)),  # triangle
)


def derive_seed(master: int, *tags) -> int:
    """Stable per-purpose seed from the master seed; sha-based so it does not
    depend on the process hash seed."""
    text = ":".join([str(int(master))] + [str(t) for t in tags])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


@dataclass(frozen=True)
class SyntheticSpec:
    image_size: int = 64
    superclasses: int = 2
    fine_per_super: int = 4
    parts_per_class: int = 2
    part_frac: float = 0.18  # part side relative to object side
    clutter: int = 14
    train_per_class: int = 100
    val_per_class: int = 25
    test_per_class: int = 25
    background_images: int = 150
    seed: int = 0

    def __post_init__(self):
        if self.fine_per_super < 2:
            raise ValueError("need at least 2 fine classes per superclass")
        if self.parts_per_class < 1:
            raise ValueError("need at least one part per class")
        capacity = min(len(s) for s in _SLOTS)
        if self.parts_per_class > capacity:
            raise ValueError(
                f"part count {self.parts_per_class} exceeds silhouette capacity {capacity}"
            )
        if self.fine_per_super * self.parts_per_class > len(PALETTE):
            raise ValueError(
                f"{self.fine_per_super * self.parts_per_class} distinct motifs needed "
                f"but palette has {len(PALETTE)}"
            )
        if self.image_size < 32:
            raise ValueError("image size below 32 leaves no room for parts")


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # (S, S, 3) uint8
    fine: int  # label within the superclass
    superclass: int
    object_box: Box
    part_boxes: tuple[Box, ...]


@dataclass(frozen=True)
class SyntheticDataset:
    spec: SyntheticSpec
    train: tuple[Sample, ...]
    val: tuple[Sample, ...]
    test: tuple[Sample, ...]
    background: tuple[np.ndarray, ...]

    def split(self, name: str) -> tuple[Sample, ...]:
        return getattr(self, name)


def motif_color(fine: int, part: int, parts_per_class: int) -> np.ndarray:
    return PALETTE[(fine * parts_per_class + part) % len(PALETTE)]


def _fill_rect(img, x0, y0, w, h, color):
    img[y0 : y0 + h, x0 : x0 + w] = color


def _fill_ellipse(img, x0, y0, w, h, color):
    yy, xx = np.ogrid[:h, :w]
    rx, ry = (w - 1) / 2.0, (h - 1) / 2.0
    mask = ((xx - rx) / max(rx, 0.5)) ** 2 + ((yy - ry) / max(ry, 0.5)) ** 2 <= 1.0
    img[y0 : y0 + h, x0 : x0 + w][mask] = color


def _fill_triangle(img, x0, y0, w, h, color):
    # apex top-center, base along the bottom edge
    yy, xx = np.ogrid[:h, :w]
    t = yy / max(h - 1, 1)
    mask = np.abs(xx - (w - 1) / 2.0) <= t * (w - 1) / 2.0
    img[y0 : y0 + h, x0 : x0 + w][mask] = color


def _draw_clutter(rng, img, count, size):
    for _ in range(count):
        w = int(rng.integers(3, 13))
        h = int(rng.integers(3, 13))
        x = int(rng.integers(0, size - w + 1))
        y = int(rng.integers(0, size - h + 1))
        if rng.random() < 0.3:
            color = np.full(3, int(rng.integers(160, 206)))
        else:
            base = PALETTE[int(rng.integers(0, len(PALETTE)))]
            color = np.rint(0.45 * base + 0.55 * 186).astype(np.int64)
        if rng.random() < 0.5:
            _fill_rect(img, x, y, w, h, color)
        else:
            _fill_ellipse(img, x, y, w, h, color)


def _render(rng, spec: SyntheticSpec, sc: int | None, fine: int | None):
    s = spec.image_size
    img = np.full((s, s, 3), _CANVAS, dtype=np.int64)
    _draw_clutter(rng, img, spec.clutter, s)
    if sc is None:
        return img.astype(np.uint8), None, ()

    side = int(round(s * rng.uniform(0.50, 0.78)))
    x0 = int(rng.integers(0, s - side + 1))
    y0 = int(rng.integers(0, s - side + 1))
    shape = sc % 2
    body = np.clip(np.asarray(_BODY[shape]) + int(rng.integers(-10, 11)), 0, 255)
    if shape == 0:
        _fill_ellipse(img, x0, y0, side, side, body)
    else:
        _fill_triangle(img, x0, y0, side, side, body)

    p = max(3, int(round(side * spec.part_frac)))
    part_boxes = []
    for pidx in range(spec.parts_per_class):
        sx, sy = _SLOTS[shape][pidx]
        jx, jy = rng.uniform(-0.05, 0.05, 2)
        px = int(round(x0 + (sx + jx) * side - p / 2))
        py = int(round(y0 + (sy + jy) * side - p / 2))
        px = min(max(px, x0 + 1), x0 + side - p - 1)
        py = min(max(py, y0 + 1), y0 + side - p - 1)
        color = motif_color(fine, pidx, spec.parts_per_class)
        if (fine * spec.parts_per_class + pidx) % 2 == 0:
            _fill_rect(img, px, py, p, p, color)
        else:
            _fill_ellipse(img, px, py, p, p, color)
        part_boxes.append(Box(px, py, p, p))
    return img.astype(np.uint8), Box(x0, y0, side, side), tuple(part_boxes)


def gen_synthetic(spec: SyntheticSpec, seed: int | None = None) -> SyntheticDataset:
    """Deterministic dataset; the explicit seed argument overrides spec.seed."""
    master = spec.seed if seed is None else int(seed)
    counts = {
        "train": spec.train_per_class,
        "val": spec.val_per_class,
        "test": spec.test_per_class,
    }
    splits = {}
    for split, count in counts.items():
        samples = []
        for sc in range(spec.superclasses):
            for fine in range(spec.fine_per_super):
                for idx in range(count):
                    rng = np.random.default_rng(derive_seed(master, "img", split, sc, fine, idx))
                    img, obox, pboxes = _render(rng, spec, sc, fine)
                    samples.append(Sample(img, fine, sc, obox, pboxes))
        splits[split] = tuple(samples)
    background = []
    for idx in range(spec.background_images):
        rng = np.random.default_rng(derive_seed(master, "bg", idx))
        background.append(_render(rng, spec, None, None)[0])
    return SyntheticDataset(spec, splits["train"], splits["val"], splits["test"], tuple(background))


def write_dataset(cfg: Config, out_dir) -> None:
    """Materialize the dataset as PPM files plus tab-separated label and
    ground-truth tables (the latter for metrics only)."""
    out = Path(out_dir)
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    ds = gen_synthetic(spec_from_config(cfg), cfg["seed"])
    labels = ["file\tsplit\tsuperclass\tfine"]
    truth = ["file\tobject\tparts"]
    for split in ("train", "val", "test"):
        per_key = {}
        for sample in ds.split(split):
            key = (sample.superclass, sample.fine)
            idx = per_key.get(key, 0)
            per_key[key] = idx + 1
            name = f"{split}_sc{sample.superclass}_f{sample.fine}_{idx:03d}.ppm"
            (data / name).write_bytes(write_ppm(sample.image / 255.0))
            labels.append(f"{name}\t{split}\t{sample.superclass}\t{sample.fine}")
            ob = sample.object_box
            parts = " ".join(f"{b.x},{b.y},{b.w},{b.h}" for b in sample.part_boxes)
            truth.append(f"{name}\t{ob.x},{ob.y},{ob.w},{ob.h}\t{parts}")
    for idx, img in enumerate(ds.background):
        name = f"background_{idx:03d}.ppm"
        (data / name).write_bytes(write_ppm(img / 255.0))
        labels.append(f"{name}\tbackground\t-1\t-1")
    (data / "labels.tsv").write_text("\n".join(labels) + "\n")
    (data / "ground_truth.tsv").write_text("\n".join(truth) + "\n")


def spec_from_config(cfg: Config) -> SyntheticSpec:
    return SyntheticSpec(
        image_size=cfg["data.image_size"],
        superclasses=cfg["data.superclasses"],
        fine_per_super=cfg["data.fine_per_super"],
        parts_per_class=cfg["data.parts_per_class"],
        part_frac=cfg["data.part_frac"],
        clutter=cfg["data.clutter"],
        train_per_class=cfg["data.train_per_class"],
        val_per_class=cfg["data.val_per_class"],
        test_per_class=cfg["data.test_per_class"],
        background_images=cfg["data.background_images"],
        seed=cfg["seed"],
    )


def proposal_params(cfg: Config) -> ProposalParams:
    return ProposalParams(
        scale_k=cfg["proposal.scale_k"],
        sigma=cfg["proposal.sigma"],
        min_size=cfg["proposal.min_size"],
    )


def _net_whole(img, size: int) -> np.ndarray:
    return to_net_input(resize_bilinear(np.asarray(img, dtype=np.float64), size, size))


def _net_patches(img, boxes, size: int) -> np.ndarray:
    return to_net_input(warp_patches_batch(np.asarray(img, dtype=np.float64), list(boxes), size, size))


def _view_patches(img, size: int) -> np.ndarray:
    """The ten fixed views at 7/8 side, warped to net input."""
    s = np.asarray(img).shape[0]
    views = ten_views(img, max(1, int(round(s * 7 / 8))))
    return np.stack([to_net_input(resize_bilinear(np.asarray(v, dtype=np.float64), size, size)) for v in views])


# ---------------------------------------------------------------------------
# training-set assembly (image-level labels only)


def _filternet_training_set(cfg, dataset: SyntheticDataset, master: int):
    s = dataset.spec.image_size
    rng = np.random.default_rng(derive_seed(master, "filternet-data"))
    xs, ys = [], []
    crop_side = max(1, int(round(s * 7 / 8)))
    for sample in dataset.train:
        xs.append(_net_whole(sample.image, FILTERNET_SIZE))
        ys.append(sample.superclass)
        x = int(rng.integers(0, s - crop_side + 1))
        y = int(rng.integers(0, s - crop_side + 1))
        xs.append(_net_patches(sample.image, [Box(x, y, crop_side, crop_side)], FILTERNET_SIZE)[0])
        ys.append(sample.superclass)
    bg_class = dataset.spec.superclasses
    for img in dataset.background:
        xs.append(_net_whole(img, FILTERNET_SIZE))
        ys.append(bg_class)
        for _ in range(3):
            side = max(8, int(round(s * rng.uniform(0.3, 0.9))))
            x = int(rng.integers(0, s - side + 1))
            y = int(rng.integers(0, s - side + 1))
            xs.append(_net_patches(img, [Box(x, y, side, side)], FILTERNET_SIZE)[0])
            ys.append(bg_class)
    return np.stack(xs).astype(np.float32), np.asarray(ys, dtype=np.int64)


def train_filternet(cfg, dataset: SyntheticDataset, master: int):
    xs, ys = _filternet_training_set(cfg, dataset, master)
    spec = small_filternet_spec(dataset.spec.superclasses + 1, FILTERNET_SIZE)
    net = init_network(spec, derive_seed(master, "filternet-init"))
    tc = TrainConfig(
        lr=cfg["filternet.lr"],
        epochs=cfg["filternet.epochs"],
        batch=cfg["filternet.batch"],
        seed=derive_seed(master, "filternet-train"),
    )
    return train(net, xs, ys, tc)[0]


def _domainnet_training_set(cfg, samples, props, filternet, sc: int):
    s = samples[0].image.shape[0]
    cap = cfg["domainnet.max_patches_per_image"]
    xs, ys = [], []
    for sample, proposals in zip(samples, props):
        sel = select_patches(
            filternet,
            sample.image,
            proposals,
            {sc},
            cfg["filter.threshold"],
            cfg["filter.max_count"],
        )
        boxes = list(sel.boxes)[:cap] or [Box(0, 0, s, s)]
        xs.append(_net_patches(sample.image, boxes, DOMAIN_SIZE).astype(np.float32))
        ys.extend([sample.fine] * len(boxes))
    return np.concatenate(xs, axis=0), np.asarray(ys, dtype=np.int64)


def train_domainnet(cfg, samples, props, filternet, sc: int, master: int):
    xs, ys = _domainnet_training_set(cfg, samples, props, filternet, sc)
    spec = mini_domainnet_spec(cfg["data.fine_per_super"], DOMAIN_SIZE)
    net = init_network(spec, derive_seed(master, "domainnet-init", sc))
    tc = TrainConfig(
        lr=cfg["domainnet.lr"],
        epochs=cfg["domainnet.epochs"],
        batch=cfg["domainnet.batch"],
        seed=derive_seed(master, "domainnet-train", sc),
    )
    return train(net, xs, ys, tc)[0]


def object_distributions(cfg, filternet, domainnet, sc, samples, props):
    """Multi-view averaged softmax per image; falls back to the ten fixed
    views when no proposal clears the threshold."""
    dists = []
    for sample, proposals in zip(samples, props):
        sel = select_patches(
            filternet,
            sample.image,
            proposals,
            {sc},
            cfg["filter.threshold"],
            cfg["filter.max_count"],
        )
        if sel.boxes:
            patches = _net_patches(sample.image, sel.boxes, DOMAIN_SIZE)
        else:
            patches = _view_patches(sample.image, DOMAIN_SIZE)
        dists.append(predict_multiview(domainnet, patches))
    return np.array(dists)


def _crop_training_set(cfg, samples, labels, master: int, tag: str):
    """Random 7/8-side crops of whole images, the whole-image baseline diet."""
    s = samples[0].image.shape[0]
    side = max(1, int(round(s * 7 / 8)))
    rng = np.random.default_rng(derive_seed(master, tag))
    per_image = cfg["baseline.crops_per_image"]
    xs, ys = [], []
    for sample, label in zip(samples, labels):
        for _ in range(per_image):
            x = int(rng.integers(0, s - side + 1))
            y = int(rng.integers(0, s - side + 1))
            xs.append(_net_patches(sample.image, [Box(x, y, side, side)], DOMAIN_SIZE)[0])
            ys.append(label)
    return np.stack(xs).astype(np.float32), np.asarray(ys, dtype=np.int64)


def _train_crop_net(cfg, samples, labels, classes: int, master: int, tag: str):
    xs, ys = _crop_training_set(cfg, samples, labels, master, f"{tag}-data")
    net = init_network(mini_domainnet_spec(classes, DOMAIN_SIZE), derive_seed(master, f"{tag}-init"))
    tc = TrainConfig(
        lr=cfg["baseline.lr"],
        epochs=cfg["baseline.epochs"],
        batch=cfg["baseline.batch"],
        seed=derive_seed(master, f"{tag}-train"),
    )
    return train(net, xs, ys, tc)[0]


def _ten_view_dists(net, samples):
    return np.array([predict_multiview(net, _view_patches(s.image, DOMAIN_SIZE)) for s in samples])


def _record(method, err, n, seed, chash):
    return {
        "method": method,
        "top1_error": round(float(err), 6),
        "n": int(n),
        "seed": int(seed),
        "config_hash": chash,
    }


def _sc_samples(samples, sc: int):
    return [s for s in samples if s.superclass == sc]


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage


@dataclass
class PipelineResult:
    records: list
    alpha: float
    noise_groups: dict
    part_localization: float
    report_text: str


class _Run:
    """Shared state for one experiment: dataset, proposal cache, artifacts."""

    def __init__(self, cfg: Config, out_dir, reuse: bool, verbose: bool):
        self.cfg = cfg
        self.master = cfg["seed"]
        self.out = Path(out_dir) if out_dir is not None else None
        self.reuse = reuse
        self.verbose = verbose
        self.hash = config_hash(cfg)
        self.dataset = gen_synthetic(spec_from_config(cfg), self.master)
        self.params = proposal_params(cfg)
        self._props = {}

    def log(self, msg: str):
        if self.verbose:
            print(msg, file=sys.stderr)

    def props(self, split: str, sc: int):
        key = (split, sc)
        if key not in self._props:
            samples = _sc_samples(self.dataset.split(split), sc)
            self._props[key] = [
                selective_search(np.asarray(s.image, dtype=np.float64), self.params)
                for s in samples
            ]
        return self._props[key]

    def load_or(self, name: str, loader, builder):
        path = self.out / name if self.out is not None else None
        if self.reuse and path is not None and path.exists():
            self.log(f"[reuse] {name}")
            return loader(path.read_bytes())
        artifact = builder()
        return artifact

    def save(self, name: str, data):
        if self.out is None:
            return
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        if isinstance(data, bytes):
            path.write_bytes(data)
        else:
            path.write_text(data)


def run_pipeline(cfg=None, out_dir=None, upto: str = "evaluate", reuse: bool = False, verbose: bool = False):
    """Run the pipeline through the named stage; returns a PipelineResult for
    the full run, None when stopped early.

    Stages in order: filternet, domainnet, parts, svm, evaluate. With
    reuse=True, stages whose artifacts already exist in out_dir are loaded
    instead of recomputed.
    """
    cfg = default_config() if cfg is None else cfg
    run = _Run(cfg, out_dir, reuse, verbose)
    order = ("filternet", "domainnet", "parts", "svm", "evaluate")
    if upto not in order:
        raise ValueError(f"unknown stage {upto!r}")
    stop = order.index(upto)

    stage = "filternet"
    try:
        run.log("[filternet] training patch scorer")
        filternet = run.load_or(
            "filternet.net",
            load_net,
            lambda: train_filternet(cfg, run.dataset, run.master),
        )
        run.save("filternet.net", save_net(filternet))
        if stop < 1:
            return None

        stage = "domainnet"
        superclasses = run.dataset.spec.superclasses
        domainnets = {}
        for sc in range(superclasses):
            run.log(f"[domainnet] superclass {sc}")
            domainnets[sc] = run.load_or(
                f"domainnet_sc{sc}.net",
                load_net,
                lambda sc=sc: train_domainnet(
                    cfg,
                    _sc_samples(run.dataset.train, sc),
                    run.props("train", sc),
                    filternet,
                    sc,
                    run.master,
                ),
            )
            run.save(f"domainnet_sc{sc}.net", save_net(domainnets[sc]))
        if stop < 2:
            return None

        stage = "parts"
        svm_cfg = SvmConfig(C=cfg["svm.C"], epochs=cfg["svm.epochs"])
        banks, tables = {}, {}

        def build_table(sc, split):
            key = (sc, split)
            if key not in tables:
                samples = _sc_samples(run.dataset.split(split), sc)
                tables[key] = collect_part_features(
                    domainnets[sc],
                    banks[sc],
                    [s.image for s in samples],
                    run.props(split, sc),
                    [s.fine for s in samples],
                )
            return tables[key]

        for sc in range(superclasses):
            run.log(f"[parts] superclass {sc}")

            def build_bank(sc=sc):
                bank = make_bank(domainnets[sc], cfg["parts.k"], derive_seed(run.master, "bank", sc))
                banks[sc] = bank
                noise = identify_noise_cluster(
                    bank, build_table(sc, "train"), build_table(sc, "val"), svm_cfg
                )
                return replace(bank, noise_group=noise)

            bank = run.load_or(
                f"bank_sc{sc}.txt", lambda b: load_bank(b.decode()), build_bank
            )
            banks[sc] = bank
            run.save(f"bank_sc{sc}.txt", save_bank(bank))
        if stop < 3:
            return None

        stage = "svm"
        svms = {}
        for sc in range(superclasses):
            run.log(f"[svm] superclass {sc}")
            svms[sc] = run.load_or(
                f"svm_sc{sc}.svm",
                load_svm,
                lambda sc=sc: svm_train(
                    build_table(sc, "train").concat(banks[sc].live_groups),
                    build_table(sc, "train").labels,
                    svm_cfg,
                )[0],
            )
            run.save(f"svm_sc{sc}.svm", save_svm(svms[sc]))
        if stop < 4:
            return None

        stage = "evaluate"
        run.log("[evaluate] baselines, streams, fusion")
        obj_val, obj_test, part_val, part_test = [], [], [], []
        base_test, multi_test, labels_val, labels_test = [], [], [], []
        for sc in range(superclasses):
            val_samples = _sc_samples(run.dataset.val, sc)
            test_samples = _sc_samples(run.dataset.test, sc)
            labels_val.extend(s.fine for s in val_samples)
            labels_test.extend(s.fine for s in test_samples)

            obj_val.append(
                object_distributions(cfg, filternet, domainnets[sc], sc, val_samples, run.props("val", sc))
            )
            obj_test.append(
                object_distributions(cfg, filternet, domainnets[sc], sc, test_samples, run.props("test", sc))
            )
            part_val.append(svm_predict_batch(svms[sc], build_table(sc, "val").concat(banks[sc].live_groups)))
            part_test.append(svm_predict_batch(svms[sc], build_table(sc, "test").concat(banks[sc].live_groups)))

            base_net = _train_crop_net(
                cfg,
                _sc_samples(run.dataset.train, sc),
                [s.fine for s in _sc_samples(run.dataset.train, sc)],
                run.dataset.spec.fine_per_super,
                run.master,
                f"baseline{sc}",
            )
            run.save(f"baseline_sc{sc}.net", save_net(base_net))
            base_test.append(_ten_view_dists(base_net, test_samples))

        fine = run.dataset.spec.fine_per_super
        multi_net = _train_crop_net(
            cfg,
            list(run.dataset.train),
            [s.superclass * fine + s.fine for s in run.dataset.train],
            superclasses * fine,
            run.master,
            "multitask",
        )
        run.save("multitask.net", save_net(multi_net))
        for sc in range(superclasses):
            test_samples = _sc_samples(run.dataset.test, sc)
            joint = _ten_view_dists(multi_net, test_samples)
            block = joint[:, sc * fine : (sc + 1) * fine]
            multi_test.append(block / block.sum(axis=1, keepdims=True))

        obj_val = np.concatenate(obj_val)
        obj_test = np.concatenate(obj_test)
        part_val = np.concatenate(part_val)
        part_test = np.concatenate(part_test)
        y_val = np.asarray(labels_val)
        y_test = np.asarray(labels_test)

        fusion = tune_alpha(obj_val, part_val, y_val)
        fused_test = np.array([fuse(o, p, fusion) for o, p in zip(obj_test, part_test)])

        n = len(y_test)
        records = [
            _record("cnn_domain", top1_error(np.concatenate(base_test), y_test), n, run.master, run.hash),
            _record("cnn_multitask", top1_error(np.concatenate(multi_test), y_test), n, run.master, run.hash),
            _record("object_level", top1_error(obj_test, y_test), n, run.master, run.hash),
            _record("part_level", top1_error(part_test, y_test), n, run.master, run.hash),
            _record("two_level", top1_error(fused_test, y_test), n, run.master, run.hash),
        ]

        hits = 0
        total = 0
        for sc in range(superclasses):
            table = build_table(sc, "test")
            live = list(banks[sc].live_groups)
            for i, sample in enumerate(_sc_samples(run.dataset.test, sc)):
                g = live[int(np.argmax(table.scores[i, live]))]
                box = table.boxes[i][g]
                hits += any(box_iou(box, pb) > 0.5 for pb in sample.part_boxes)
                total += 1

        report_text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
        metrics = {
            "alpha": fusion.alpha,
            "noise_groups": {str(sc): banks[sc].noise_group for sc in range(superclasses)},
            "part_localization": round(hits / total, 6),
            "seed": run.master,
            "config_hash": run.hash,
        }
        run.save("report.jsonl", report_text)
        run.save("metrics.json", json.dumps(metrics, sort_keys=True) + "\n")
        return PipelineResult(
            records=records,
            alpha=fusion.alpha,
            noise_groups={sc: banks[sc].noise_group for sc in range(superclasses)},
            part_localization=hits / total,
            report_text=report_text,
        )
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError(stage, e) from e


def run_baseline_domain(cfg=None):
    """Whole-image baseline alone: per-superclass nets on random crops,
    ten-view averaged testing."""
    cfg = default_config() if cfg is None else cfg
    run = _Run(cfg, None, False, False)
    dists, labels = [], []
    for sc in range(run.dataset.spec.superclasses):
        train_samples = _sc_samples(run.dataset.train, sc)
        test_samples = _sc_samples(run.dataset.test, sc)
        net = _train_crop_net(
            cfg,
            train_samples,
            [s.fine for s in train_samples],
            run.dataset.spec.fine_per_super,
            run.master,
            f"baseline{sc}",
        )
        dists.append(_ten_view_dists(net, test_samples))
        labels.extend(s.fine for s in test_samples)
    err = top1_error(np.concatenate(dists), np.asarray(labels))
    return [_record("cnn_domain", err, len(labels), run.master, run.hash)]


def run_baseline_multitask(cfg=None):
    """Joint fine-label net; test-time softmax restricted to the true
    superclass's classes and renormalized."""
    cfg = default_config() if cfg is None else cfg
    run = _Run(cfg, None, False, False)
    spec = run.dataset.spec
    if spec.superclasses < 2:
        raise ValueError("multitask baseline needs at least 2 superclasses")
    fine = spec.fine_per_super
    net = _train_crop_net(
        cfg,
        list(run.dataset.train),
        [s.superclass * fine + s.fine for s in run.dataset.train],
        spec.superclasses * fine,
        run.master,
        "multitask",
    )
    dists, labels = [], []
    for sc in range(spec.superclasses):
        test_samples = _sc_samples(run.dataset.test, sc)
        joint = _ten_view_dists(net, test_samples)
        block = joint[:, sc * fine : (sc + 1) * fine]
        dists.append(block / block.sum(axis=1, keepdims=True))
        labels.extend(s.fine for s in test_samples)
    err = top1_error(np.concatenate(dists), np.asarray(labels))
    return [_record("cnn_multitask", err, len(labels), run.master, run.hash)]
