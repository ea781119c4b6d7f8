"""Acceptance gate for the two-level attention pipeline.

Each test prints one PASS/FAIL line (run with -s to see them all). The
numbered checks cover gradient correctness, the eigensolver, clustering
against an exhaustive oracle, proposal invariants, attention contracts,
SVM convergence, the end-to-end error ordering on the bundled benchmark,
part localization, CLI determinism, and serialization round-trips.
"""

import time

import numpy as np
import pytest

from tla.classify import (
    SvmConfig,
    load_svm,
    save_svm,
    svm_predict_batch,
    svm_train,
)
from tla.cli import main
from tla.config import default_config
from tla.convnet import (
    Conv,
    Fc,
    MaxPool,
    NetworkSpec,
    Relu,
    Softmax,
    forward_batch,
    init_network,
    load_net,
    loss_and_gradients,
    pack_params,
    save_net,
    small_filternet_spec,
    unpack_params,
)
from tla.harness import gen_synthetic, proposal_params, run_pipeline, spec_from_config
from tla.numerics import finite_diff_grad, sym_eigen
from tla.object_attention import filter_confidence, predict_multiview, select_patches
from tla.part_attention import (
    brute_force_min_ncut,
    normalized_cut_value,
    planted_partition,
    spectral_cluster,
)
from tla.region_proposal import felzenszwalb_segment, selective_search


def _verdict(num: int, label: str, ok: bool, detail: str):
    line = f"[{num:2d}] {label}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


def _bench_images(count: int):
    ds = gen_synthetic(spec_from_config(default_config()), seed=11)
    pool = list(ds.train) + list(ds.val) + list(ds.test)
    step = max(1, len(pool) // count)  # stride so every class and split shows up
    return [np.asarray(s.image, dtype=np.float64) for s in pool[::step][:count]]


def test_backprop_matches_central_differences():
    t0 = time.monotonic()
    spec = NetworkSpec(
        (8, 8, 2),
        (Conv(4, 3, 1, 1), Relu(), MaxPool(2, 2), Fc(6), Relu(), Fc(3), Softmax()),
    )
    net = init_network(spec, seed=7)
    rng = np.random.default_rng(7)
    xs = rng.standard_normal((3, 8, 8, 2))
    ys = rng.integers(0, 3, size=3)
    _, grads = loss_and_gradients(net, xs, ys)
    analytic = pack_params(type(net)(spec, grads))

    def f(vec):
        return loss_and_gradients(unpack_params(net, vec), xs, ys)[0]

    numeric = finite_diff_grad(f, pack_params(net), eps=1e-5)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    err = float(rel.max())
    took = time.monotonic() - t0
    _verdict(
        1,
        "backprop gradients vs central differences (rel err < 1e-4)",
        err < 1e-4 and took < 30.0,
        f"max rel err {err:.2e}, {took:.1f}s",
    )


def test_eigensolver_residual_and_reconstruction():
    t0 = time.monotonic()
    rng = np.random.default_rng(3)
    worst_res, worst_rec = 0.0, 0.0
    for _ in range(100):
        n = int(rng.integers(1, 33))
        m = rng.standard_normal((n, n))
        m = (m + m.T) / 2.0
        vals, vecs = sym_eigen(m)
        worst_res = max(worst_res, float(np.abs(m @ vecs - vecs * vals).max()))
        worst_rec = max(worst_rec, float(np.abs((vecs * vals) @ vecs.T - m).max()))
    took = time.monotonic() - t0
    _verdict(
        2,
        "eigensolver on 100 symmetric matrices (residual < 1e-8, recon < 1e-7)",
        worst_res < 1e-8 and worst_rec < 1e-7 and took < 10.0,
        f"residual {worst_res:.2e}, recon {worst_rec:.2e}, {took:.1f}s",
    )


def test_spectral_clustering_matches_exhaustive_ncut():
    t0 = time.monotonic()
    rng = np.random.default_rng(5)
    hits = 0
    for case in range(50):
        s, k, _ = planted_partition(rng, max_n=12)
        got = spectral_cluster(s, k, seed=case)
        _, best = brute_force_min_ncut(s, k)
        if normalized_cut_value(s, got) <= best + 1e-9:
            hits += 1
    took = time.monotonic() - t0
    _verdict(
        3,
        "spectral clustering hits exhaustive min ncut on >= 48/50 planted cases",
        hits >= 48 and took < 30.0,
        f"{hits}/50 matched, {took:.1f}s",
    )


def test_proposal_invariants_on_generated_images():
    t0 = time.monotonic()
    params = proposal_params(default_config())
    imgs = _bench_images(100)
    ok = True
    for img in imgs:
        side = img.shape[0]
        seg = felzenszwalb_segment(
            img, scale_k=params.scale_k, sigma=params.sigma, min_size=params.min_size
        )
        labels = np.unique(seg.label_map)
        ok &= bool(np.array_equal(labels, np.arange(seg.region_count)))
        props = selective_search(img, params)
        ok &= props.merge_count == props.initial_region_count - 1
        for b in props.boxes:
            ok &= b.x >= 0 and b.y >= 0 and b.w >= 1 and b.h >= 1
            ok &= b.x + b.w <= side and b.y + b.h <= side
    flat = selective_search(np.full((32, 32, 3), 128.0), params)
    ok &= len(flat.boxes) == 1
    took = time.monotonic() - t0
    _verdict(
        4,
        "proposals in-bounds, labels partition pixels, merges = regions - 1",
        ok,
        f"100 images + constant image, {took:.1f}s",
    )


def test_object_attention_contracts():
    t0 = time.monotonic()
    net = init_network(small_filternet_spec(3), seed=2)
    params = proposal_params(default_config())
    imgs = _bench_images(20)
    monotone = True
    for img in imgs:
        props = selective_search(img, params)
        prev = None
        for thr in np.linspace(1.0, 0.0, 11):
            sel = set(select_patches(net, img, props, [0, 1], threshold=float(thr)).boxes)
            if prev is not None:
                monotone &= prev <= sel
            prev = sel

    rng = np.random.default_rng(9)
    patches = [rng.uniform(-0.5, 0.5, size=(32, 32, 3)) for _ in range(12)]
    base = predict_multiview(net, patches)
    permuted = all(
        np.array_equal(base, predict_multiview(net, [patches[i] for i in rng.permutation(12)]))
        for _ in range(10)
    )

    worst = 0.0
    for _ in range(20):
        patch = rng.uniform(-0.5, 0.5, size=(32, 32, 3))
        s = list(rng.choice(3, size=int(rng.integers(1, 3)), replace=False))
        comp = [c for c in range(3) if c not in s]
        worst = max(worst, abs(filter_confidence(net, patch, s) + filter_confidence(net, patch, comp) - 1.0))
    took = time.monotonic() - t0
    _verdict(
        5,
        "threshold-monotone selection, multiview permutation invariance, complement identity",
        monotone and permuted and worst <= 1e-12,
        f"complement gap {worst:.1e}, {took:.1f}s",
    )


def test_svm_separable_accuracy_and_monotone_objective():
    t0 = time.monotonic()
    ok = True
    for seed in range(20):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(3, 6))
        phase = rng.uniform(0, 2 * np.pi)
        angles = phase + 2 * np.pi * np.arange(k) / k
        centers = 5.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        x = np.concatenate([c + 0.25 * rng.standard_normal((30, 2)) for c in centers])
        y = np.repeat(np.arange(k), 30)
        model, history = svm_train(x, y, SvmConfig(C=1.0, epochs=200))
        acc = float((svm_predict_batch(model, x).argmax(axis=1) == y).mean())
        ok &= acc == 1.0
        ok &= all(b <= a + 1e-12 for a, b in zip(history, history[1:]))
    took = time.monotonic() - t0
    _verdict(
        6,
        "SVM reaches 100% train accuracy on separable 2-D data, objective non-increasing",
        ok,
        f"20 seeds, {took:.1f}s",
    )


@pytest.fixture(scope="module")
def benchmark_runs():
    runs = {}
    for seed in range(1, 6):
        cfg = default_config().override(seed=seed)
        t0 = time.monotonic()
        res = run_pipeline(cfg)
        runs[seed] = (res, time.monotonic() - t0)
    return runs


def _mean_error(runs, method: str) -> float:
    vals = []
    for res, _ in runs.values():
        vals.append(next(r["top1_error"] for r in res.records if r["method"] == method))
    return float(np.mean(vals))


@pytest.mark.slow
def test_benchmark_error_ordering(benchmark_runs):
    two = _mean_error(benchmark_runs, "two_level")
    obj = _mean_error(benchmark_runs, "object_level")
    dom = _mean_error(benchmark_runs, "cnn_domain")
    slowest = max(t for _, t in benchmark_runs.values())
    ok = two <= obj - 0.02 and obj <= dom - 0.05 and slowest < 600.0
    _verdict(
        7,
        "mean errors: two_level <= object - 0.02 <= ... <= cnn_domain - 0.05, each seed < 10 min",
        ok,
        f"two {two:.3f}, object {obj:.3f}, domain {dom:.3f}, slowest seed {slowest:.0f}s",
    )


@pytest.mark.slow
def test_benchmark_part_localization(benchmark_runs):
    locs = [res.part_localization for res, _ in benchmark_runs.values()]
    mean = float(np.mean(locs))
    _verdict(
        8,
        "best live part detection hits a true part (IoU > 0.5) on >= 70% of test images",
        mean >= 0.7,
        "per-seed " + " ".join(f"{v:.2f}" for v in locs) + f", mean {mean:.2f}",
    )


SMALL_BENCH = (
    "data.train_per_class = 6\ndata.val_per_class = 3\ndata.test_per_class = 3\n"
    "data.background_images = 6\nfilternet.epochs = 2\ndomainnet.epochs = 2\n"
    "baseline.epochs = 2\nsvm.epochs = 30\n"
)


@pytest.mark.slow
def test_run_all_twice_is_byte_identical(tmp_path):
    t0 = time.monotonic()
    cfg_file = tmp_path / "bench.cfg"
    cfg_file.write_text(SMALL_BENCH)
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        rc = main(["run-all", "--config", str(cfg_file), "--seed", "7",
                   "--workdir", str(d), "--quiet"])
        assert rc == 0
    files = [sorted(p.relative_to(d) for p in d.rglob("*") if p.is_file()) for d in dirs]
    same_names = files[0] == files[1]
    same_bytes = all(
        (dirs[0] / rel).read_bytes() == (dirs[1] / rel).read_bytes() for rel in files[0]
    )
    took = time.monotonic() - t0
    _verdict(
        9,
        "run-all --seed 7 twice: identical file sets, byte-identical contents",
        same_names and same_bytes,
        f"{len(files[0])} files compared, {took:.0f}s",
    )


def test_serialization_round_trips_exactly():
    t0 = time.monotonic()
    spec = NetworkSpec(
        (8, 8, 2),
        (Conv(4, 3, 1, 1), Relu(), MaxPool(2, 2), Fc(6), Relu(), Fc(3), Softmax()),
    )
    net = init_network(spec, seed=13)
    back = load_net(save_net(net))
    rng = np.random.default_rng(13)
    xs = rng.standard_normal((100, 8, 8, 2))
    net_ok = np.array_equal(forward_batch(net, xs), forward_batch(back, xs))

    feats = rng.standard_normal((60, 5))
    labels = rng.integers(0, 3, size=60)
    model, _ = svm_train(feats, labels, SvmConfig(epochs=50))
    model_back = load_svm(save_svm(model))
    qs = rng.standard_normal((100, 5))
    svm_ok = np.array_equal(svm_predict_batch(model, qs), svm_predict_batch(model_back, qs))
    took = time.monotonic() - t0
    _verdict(
        10,
        "network and SVM reload to byte-equal outputs on 100 random inputs",
        net_ok and svm_ok,
        f"{took:.1f}s",
    )
