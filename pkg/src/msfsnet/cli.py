"""Command-line entry point.

Exit codes: 0 success, 1 validation or ingest failure, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import MSFSError, NumericalError

log = logging.getLogger("msfsnet")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _train(args) -> int:
    from .data import ingest_pairs
    from .train import resume, train

    ds = ingest_pairs(args.blurry, args.sharp)
    cfg = load_config(args.config)
    metrics = args.metrics or Path(args.out).with_suffix(".metrics.csv")
    if args.resume:
        st = resume(args.resume, ds, epochs=cfg.epochs, out=args.out, metrics_csv=metrics)
    else:
        st = train(ds, cfg, out=args.out, metrics_csv=metrics)
    last = st.history[-1] if st.history else {}
    print(f"trained {st.opt.step} steps, {st.epoch} epochs; checkpoint {args.out}; metrics {metrics}")
    if last:
        print(f"last epoch: loss {last['loss_total']:.5f} psnr {last['psnr']:.3f} dB")
    return EXIT_OK


def _infer(args) -> int:
    from .images import read_image, write_image
    from .train import load_model

    model = load_model(args.ckpt)
    img = read_image(args.input)
    if img.shape[0] != model.cfg.in_channels:
        img = np.repeat(img, model.cfg.in_channels, axis=0) if img.shape[0] == 1 else img[: model.cfg.in_channels]
    out = model.restore(img[None])[0]
    if not np.all(np.isfinite(out)):
        raise NumericalError("restored image contains non-finite values")
    write_image(args.output, np.clip(out, 0, 1))
    print(f"wrote {args.output}")
    return EXIT_OK


def _analyze(args) -> int:
    from .analysis import entropy_report, load_corpus_pair, write_report

    a, b = load_corpus_pair(args.corpus_a, args.corpus_b)
    rows = entropy_report(a, b, sigma=args.sigma, labels=("a", "b"))
    files = write_report(rows, args.out)
    for r in rows:
        print(f"{r.band} scale {r.scale:g}: JS {r.js_bits:.4f} bits "
              f"(mean entropy {r.mean_entropy_a:.3f} / {r.mean_entropy_b:.3f})")
    print(f"wrote {len(files)} files next to {args.out}")
    return EXIT_OK


def _synth(args) -> int:
    from .data import synth_corpus, write_dataset

    ds = synth_corpus(args.n, args.size, args.seed)
    bdir, sdir = write_dataset(ds, args.out)
    print(f"wrote {len(ds)} pairs to {bdir} and {sdir}")
    return EXIT_OK


def _ablate(args) -> int:
    from .data import ingest_pairs
    from .train import ablate

    rows = ablate(ingest_pairs(args.blurry, args.sharp), load_config(args.config), args.out)
    for r in rows:
        print(f"{r['config']:<20} psnr {r['psnr']:.3f} ssim {r['ssim']:.4f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _gradcheck(args) -> int:
    from .selfcheck import gradient_suite

    results = gradient_suite(float64=args.f64, seed=args.seed, log=print)
    failed = [name for name, rep in results if not rep.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msfsnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on paired blurry/sharp directories")
    t.add_argument("--blurry", required=True)
    t.add_argument("--sharp", required=True)
    t.add_argument("--config", help="flat key=value file; omitted keys keep their defaults")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="per-epoch CSV (default: <out>.metrics.csv)")
    t.add_argument("--resume", help="continue from this checkpoint up to the config's epoch count")
    t.set_defaults(func=_train)

    i = sub.add_parser("infer", help="deblur one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.set_defaults(func=_infer)

    a = sub.add_parser("analyze", help="per-band entropy divergence between two paired corpora")
    a.add_argument("--corpus-a", required=True)
    a.add_argument("--corpus-b", required=True)
    a.add_argument("--sigma", type=float, default=2.0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=_analyze)

    s = sub.add_parser("synth", help="write a synthetic paired corpus")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_synth)

    b = sub.add_parser("ablate", help="train every ablation variant and tabulate PSNR/SSIM")
    b.add_argument("--blurry", required=True)
    b.add_argument("--sharp", required=True)
    b.add_argument("--config")
    b.add_argument("--out", required=True)
    b.set_defaults(func=_ablate)

    g = sub.add_parser("gradcheck", help="compare backprop with finite differences")
    g.add_argument("--f64", action="store_true", help="run at 64-bit precision")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (MSFSError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
