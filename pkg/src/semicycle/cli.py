"""Command-line entry point: ``semicycle <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 input error, 3 compatibility error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as configfile
from .errors import CheckpointError, ConfigError, DimensionError, IncompatibleError, InputError, TrainingError

log = logging.getLogger("semicycle")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT, EXIT_COMPAT = 0, 1, 2, 3


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        elif part.strip():
            out.append(int(part))
    return out


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


# ---- build-ref -------------------------------------------------------------------

def _inputs_digest(stems, layout, k: int, seed: int) -> str:
    h = hashlib.sha256(f"k={k}|seed={seed}".encode())
    for s in stems:
        h.update(s.encode())
        h.update(layout.photos[s].read_bytes())
        h.update(layout.sketches[s].read_bytes())
    return h.hexdigest()


def cmd_build_ref(args) -> int:
    from .dataset import load_pairs, scan_layout
    from .features import LEVELS, ExtractorSpec
    from .psf import build_reference_store, dumps_store

    layout = scan_layout(args.data)
    stems = layout.pair_stems("train")
    if not stems:
        raise InputError(f"{args.data}: no photo/sketch pairs in the train split")
    out = Path(args.out)
    stamp = out.with_name(out.name + ".sha256")
    digest = _inputs_digest(stems, layout, args.k, args.seed)
    if out.exists() and stamp.exists() and stamp.read_text().strip() == digest:
        print(f"{out}: up to date")
        return EXIT_OK
    photos, sketches, _ = load_pairs(layout, "train")
    store = build_reference_store(photos, sketches, ExtractorSpec(seed=args.seed), k=args.k, levels=LEVELS)
    blob = dumps_store(store)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(blob)
    stamp.write_text(digest + "\n")
    print(f"N = {store.N}")
    for lvl in sorted(store.banks):
        print(f"m{lvl} = {store.m(lvl)}")
    skipped = [lvl for lvl in LEVELS if lvl not in store.banks]
    if skipped:
        print(f"skipped levels {skipped}: maps smaller than k={args.k}")
    print(f"bytes = {len(blob)}")
    return EXIT_OK


# ---- train -------------------------------------------------------------------------

def _train_config(args):
    from .trainer import TrainConfig

    cfg = configfile.load(args.config, TrainConfig) if args.config else TrainConfig()
    for item in args.set or []:
        cfg = configfile.loads(item, TrainConfig, base=cfg)
    return cfg


def cmd_train(args) -> int:
    from .dataset import load_pairs, load_photo_dir, scan_layout
    from .features import get_extractor
    from .plotting import save_grid
    from .psf import load_store
    from .trainer import Trainer, infer_p2s

    cfg = _train_config(args)
    layout = scan_layout(args.data)
    photos, sketches, _ = load_pairs(layout, "train")
    extra = None
    if args.extra_photos:
        extra, _ = load_photo_dir(args.extra_photos)
    if photos.shape[-1] != cfg.image_size or photos.shape[-2] != cfg.image_size:
        raise InputError(f"images are {photos.shape[-2]}x{photos.shape[-1]}, config image_size={cfg.image_size}")
    store = load_store(args.ref, expected_fingerprint=get_extractor(cfg.extractor).fingerprint)
    trainer = Trainer(cfg, store, photos, sketches, extra)
    if args.dry_run:
        sys.stdout.write(configfile.dumps(cfg))
        print(f"# steps = {trainer.total_steps} ({trainer.steps_per_epoch} per epoch)")
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    configfile.save(cfg, out / "config.txt")
    if args.resume:
        trainer.load(args.resume)
    show = list(range(min(4, len(photos))))

    def samples(tr, path):
        g = tr.nets["g_p2s"]
        rows = [[photos[i], infer_p2s(g, photos[i]), sketches[i]] for i in show]
        save_grid(rows, path.with_suffix(".png"), ["photo", "generated", "reference"])

    trainer.run(log_path=out / "train.tsv", checkpoint_dir=out, on_checkpoint=samples)
    print(f"trained {trainer.step} steps; log {out / 'train.tsv'}")
    return EXIT_OK


# ---- infer -------------------------------------------------------------------------

def cmd_infer(args) -> int:
    from .images import read_image, write_image
    from .trainer import TrainConfig, infer_p2s, infer_s2p, load_generators

    cfg = configfile.load(args.config, TrainConfig) if args.config else TrainConfig()
    gens = load_generators(args.ckpt, cfg)
    if args.direction == "p2s":
        gen, fn, channels = gens["g_p2s"], infer_p2s, 3
    else:
        gen, fn, channels = gens["g_s2p"], infer_s2p, 1
    src = Path(args.input)
    if src.is_dir():
        from .dataset import list_images
        files = list_images(src)
        dst = Path(args.out)
        dst.mkdir(parents=True, exist_ok=True)
        for stem, path in files.items():
            write_image(dst / f"{stem}.png", fn(gen, read_image(path, channels), pad=not args.no_pad))
        print(f"wrote {len(files)} images to {dst}")
    else:
        write_image(args.out, fn(gen, read_image(src, channels), pad=not args.no_pad))
    return EXIT_OK


# ---- stego-demo ----------------------------------------------------------------------

def cmd_stego_demo(args) -> int:
    from .plotting import plot_sweep, save_triptych
    from .stego import StegoConfig, batched, make_dataset, noise_sweep, write_tsv

    base = StegoConfig()
    if args.config:
        base = configfile.load(args.config, StegoConfig)
    if args.steps:
        base = dataclasses.replace(base, steps=args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = make_dataset(base)
    reports, nets = noise_sweep(data, args.sigmas, args.seeds, base, workers=args.workers,
                                keep_nets=True)
    write_tsv(reports, out / "stego.tsv")
    plot_sweep(reports, out / "stego.png", chance=1 - 1 / base.n_hues)
    photos = data["heldout"][0][:3]
    for rep, net in zip(reports, nets):
        if net is None:
            continue
        s_hat = batched(net.g_p2s, photos)
        p_rec = batched(net.g_s2p, s_hat)
        for i in range(len(photos)):
            save_triptych(photos[i], s_hat[i], p_rec[i],
                          out / f"triptych_sigma{rep.sigma:g}_seed{rep.seed}_{i}.png",
                          f"sigma={rep.sigma:g} seed={rep.seed}")
    print(f"{len(reports)} runs; table {out / 'stego.tsv'}, plot {out / 'stego.png'}")
    return EXIT_OK


# ---- small utilities ---------------------------------------------------------------

def cmd_gen_synthetic(args) -> int:
    from .dataset import write_synthetic

    layout = write_synthetic(args.out, args.count, args.size, args.seed, args.hues)
    print(f"wrote {len(layout.photos)} pairs to {args.out}")
    return EXIT_OK


def cmd_match_viz(args) -> int:
    from .dataset import load_pairs, scan_layout
    from .features import ExtractorSpec, extract_pyramid, get_extractor
    from .images import read_image, write_image
    from .psf import load_store, match_conv, pixel_projection, select_candidates

    spec = ExtractorSpec(seed=args.seed)
    store = load_store(args.ref, expected_fingerprint=get_extractor(spec).fingerprint)
    _, ref_sketches, _ = load_pairs(scan_layout(args.data), "train")
    if len(ref_sketches) != store.N:
        raise InputError(f"store holds {store.N} references, {args.data} has {len(ref_sketches)} pairs")
    photo = read_image(args.input, 3)
    pyr = extract_pyramid(photo, spec)
    if args.level not in store.banks:
        raise InputError(f"level {args.level} is not in the store (available {sorted(store.banks)})")
    cand = select_candidates(pyr, store, min(args.n, store.N))
    match = match_conv(pyr.levels[args.level], store, args.level, cand, pyr.fingerprint)
    proj = pixel_projection(match, store, ref_sketches) * 2 - 1
    H, W = photo.shape[1:]
    canvas = np.full((3, H, 2 * W), 1.0)
    canvas[:, :, :W] = photo
    ph, pw = min(H, proj.shape[1]), min(W, proj.shape[2])
    canvas[:, :ph, W:W + pw] = proj[:, :ph, :pw]
    write_image(args.out, canvas)
    print(f"mean match score {float(np.mean(match.score)):.4f}; wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_suite

    results = run_suite()
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'}\t{r.name}\t{r.error:.3e}\t{r.seconds:.2f}s")
    bad = [r for r in results if not r.ok]
    print(f"{len(results) - len(bad)}/{len(results)} within {TOLERANCE:g}")
    return EXIT_RUNTIME if bad else EXIT_OK


def cmd_ssim(args) -> int:
    from .images import read_image
    from .ssim import SsimParams, ssim

    a, b = read_image(args.a), read_image(args.b)
    if a.shape[0] != b.shape[0]:
        a, b = read_image(args.a, 3), read_image(args.b, 3)
    print(f"{ssim(a, b, SsimParams(window=args.window)):.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semicycle", description="Semi-supervised photo/sketch translation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("build-ref", help="precompute the reference patch store")
    s.add_argument("--data", required=True)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0, help="extractor seed")
    s.set_defaults(fn=cmd_build_ref)

    s = sub.add_parser("train", help="train the four networks")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    s.add_argument("--data", required=True)
    s.add_argument("--extra-photos")
    s.add_argument("--ref", required=True)
    s.add_argument("--out", default="run")
    s.add_argument("--resume", metavar="CKPT")
    s.add_argument("--dry-run", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("infer", help="translate one image or a directory")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--config", help="training config (network sizes)")
    s.add_argument("--input", required=True)
    s.add_argument("--direction", choices=("p2s", "s2p"), default="p2s")
    s.add_argument("--out", required=True)
    s.add_argument("--no-pad", action="store_true", help="fail instead of padding odd sizes")
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("stego-demo", help="steganography probe sweep over noise levels")
    s.add_argument("--sigmas", type=_float_list, default=[0.0, 10.0, 20.0, 30.0])
    s.add_argument("--seeds", type=_int_list, default=[1, 2, 3, 4, 5])
    s.add_argument("--out", default="stego")
    s.add_argument("--config")
    s.add_argument("--steps", type=int, default=0, help="override training steps per run")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(fn=cmd_stego_demo)

    s = sub.add_parser("gen-synthetic", help="write a synthetic paired dataset")
    s.add_argument("--count", type=int, default=64)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--hues", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_gen_synthetic)

    s = sub.add_parser("match-viz", help="pixel projection of the best matches")
    s.add_argument("--ref", required=True)
    s.add_argument("--data", required=True, help="dataset the store was built from")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--level", type=int, default=3)
    s.add_argument("--n", type=int, default=3)
    s.add_argument("--seed", type=int, default=0, help="extractor seed")
    s.set_defaults(fn=cmd_match_viz)

    s = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("ssim", help="SSIM between two images")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--window", choices=("gaussian", "uniform"), default="gaussian")
    s.set_defaults(fn=cmd_ssim)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except IncompatibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (InputError, ConfigError, DimensionError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TrainingError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
