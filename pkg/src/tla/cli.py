"""Command-line surface for the two-level attention pipeline.

Verbs cover dataset generation, each training stage, evaluation, a full
end-to-end run, per-image proposal/selection/detection dumps, and a numeric
selfcheck. One master seed (--seed flag, TLA_SEED env, or config) drives
every computation; rerunning a verb reproduces its artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import convnet, harness
from .classify import SvmConfig, svm_train
from .config import default_config, parse_config
from .imaging import read_ppm
from .numerics import finite_diff_grad, sym_eigen
from .object_attention import select_patches
from .part_attention import (
    brute_force_min_ncut,
    detect_parts,
    load_bank,
    normalized_cut_value,
    planted_partition,
    spectral_cluster,
)
from .region_proposal import selective_search
from .report import render_report

__all__ = ["main"]


def _effective_config(args):
    if args.config is None:
        cfg = default_config()
    else:
        cfg = parse_config(Path(args.config).read_text())
    seed = args.seed
    if seed is None and os.environ.get("TLA_SEED"):
        seed = int(os.environ["TLA_SEED"])
    if seed is not None:
        cfg = cfg.override(seed=seed)
    return cfg


def _read_image(path: str) -> np.ndarray:
    # scoring and detection expect 8-bit-range pixels
    return np.asarray(read_ppm(Path(path).read_bytes()), dtype=np.float64) * 255.0


def _cmd_gen_data(args) -> int:
    cfg = _effective_config(args)
    harness.write_dataset(cfg, args.workdir)
    print(f"dataset written under {args.workdir}/data")
    return 0


def _cmd_propose(args) -> int:
    cfg = _effective_config(args)
    props = selective_search(_read_image(args.image), harness.proposal_params(cfg))
    for box in props.boxes:
        print(f"{box.x} {box.y} {box.w} {box.h}")
    return 0


def _cmd_select(args) -> int:
    cfg = _effective_config(args)
    img = _read_image(args.image)
    net = convnet.load_net((Path(args.workdir) / "filternet.net").read_bytes())
    props = selective_search(img, harness.proposal_params(cfg))
    sel = select_patches(
        net, img, props, {args.superclass}, cfg["filter.threshold"], cfg["filter.max_count"]
    )
    for box, score in zip(sel.boxes, sel.scores):
        print(f"{box.x} {box.y} {box.w} {box.h} {score:.6f}")
    return 0


def _cmd_detect(args) -> int:
    cfg = _effective_config(args)
    img = _read_image(args.image)
    work = Path(args.workdir)
    net = convnet.load_net((work / f"domainnet_sc{args.superclass}.net").read_bytes())
    bank = load_bank((work / f"bank_sc{args.superclass}.txt").read_text())
    det = detect_parts(net, bank, img, selective_search(img, harness.proposal_params(cfg)))
    for g, box, score in zip(det.group_ids, det.boxes, det.scores):
        print(f"{g} {box.x} {box.y} {box.w} {box.h} {score:.6f}")
    return 0


_STAGE_OF_VERB = {
    "train-filternet": "filternet",
    "train-domainnet": "domainnet",
    "build-parts": "parts",
    "train-svm": "svm",
    "evaluate": "evaluate",
}


def _cmd_stage(args) -> int:
    cfg = _effective_config(args)
    result = harness.run_pipeline(
        cfg,
        out_dir=args.workdir,
        upto=_STAGE_OF_VERB[args.verb],
        reuse=True,
        verbose=not args.quiet,
    )
    if result is not None:
        print(render_report(result.report_text), end="")
    return 0


def _cmd_run_all(args) -> int:
    cfg = _effective_config(args)
    result = harness.run_pipeline(
        cfg, out_dir=args.workdir, upto="evaluate", reuse=False, verbose=not args.quiet
    )
    print(render_report(result.report_text), end="")
    return 0


# --- selfcheck battery ------------------------------------------------------


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-8)))


def _toy_spec() -> convnet.NetworkSpec:
    return convnet.NetworkSpec(
        (6, 6, 2),
        (
            convnet.Conv(3, 3, 1, 1),
            convnet.Relu(),
            convnet.MaxPool(2, 2),
            convnet.Fc(5),
            convnet.Relu(),
            convnet.Fc(3),
            convnet.Softmax(),
        ),
    )


def _check_gradients():
    net = convnet.init_network(_toy_spec(), 11)
    rng = np.random.default_rng(12)
    x = rng.random((2, 6, 6, 2))
    y = np.array([0, 2])
    _, grads = convnet.loss_and_gradients(net, x, y)
    analytic = np.concatenate(
        [np.concatenate([g[0].ravel(), g[1].ravel()]) for g in grads if g is not None]
    )
    numeric = finite_diff_grad(
        lambda p: convnet.loss_and_gradients(convnet.unpack_params(net, p), x, y)[0],
        convnet.pack_params(net),
        1e-5,
    )
    err = _rel_err(analytic, numeric)
    return err < 1e-4, f"max rel err {err:.2e}"


def _check_eigen():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(2, 33))
        m = rng.standard_normal((n, n))
        m = (m + m.T) / 2.0
        vals, vecs = sym_eigen(m)
        resid = np.max(np.abs(m @ vecs - vecs * vals))
        recon = np.max(np.abs((vecs * vals) @ vecs.T - m))
        worst = max(worst, resid, recon)
    return worst < 1e-8, f"worst residual {worst:.2e}"


def _check_clustering():
    good = 0
    for i in range(10):
        s, k, _ = planted_partition(np.random.default_rng(100 + i), max_n=9)
        got = spectral_cluster(s, k, seed=i)
        if abs(normalized_cut_value(s, got) - brute_force_min_ncut(s, k)[1]) < 1e-9:
            good += 1
    return good >= 9, f"{good}/10 match the brute-force minimum cut"


def _check_svm():
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.normal((-2, 0), 0.3, (30, 2)), rng.normal((2, 0), 0.3, (30, 2))])
    y = np.repeat([0, 1], 30)
    model, hist = svm_train(x, y, SvmConfig(epochs=100))
    acc = float((np.argmax(x @ model.weights.T + model.bias, axis=1) == y).mean())
    mono = all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    return acc == 1.0 and mono, f"train acc {acc:.2f}, objective monotone {mono}"


def _cmd_selfcheck(args) -> int:
    checks = [
        ("gradient check", _check_gradients),
        ("eigensolver residuals", _check_eigen),
        ("spectral vs brute-force cut", _check_clustering),
        ("svm separable sanity", _check_svm),
    ]
    all_ok = True
    for name, fn in checks:
        ok, detail = fn()
        all_ok &= ok
        print(f"{name}: {'PASS' if ok else 'FAIL'} ({detail})")
    return 0 if all_ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tla", description="two-level attention pipeline for fine-grained classification"
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    image_verbs = {"propose": _cmd_propose, "select": _cmd_select, "detect": _cmd_detect}
    plain_verbs = {
        "gen-data": _cmd_gen_data,
        "run-all": _cmd_run_all,
        "selfcheck": _cmd_selfcheck,
        **{verb: _cmd_stage for verb in _STAGE_OF_VERB},
    }
    for verb, fn in {**plain_verbs, **image_verbs}.items():
        p = sub.add_parser(verb)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="master seed (or TLA_SEED env)")
        p.add_argument("--workdir", default="runs/exp", help="artifact directory")
        p.add_argument("--quiet", action="store_true", help="suppress progress lines")
        if verb in image_verbs:
            p.add_argument("image", help="PPM image path")
            if verb != "propose":
                p.add_argument("--superclass", type=int, default=0)
        p.set_defaults(fn=fn)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
