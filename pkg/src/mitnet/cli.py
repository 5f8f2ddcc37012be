"""Command line: train, eval, infer, ablate, analyze, synth."""
import argparse
import csv
import logging
import sys
from pathlib import Path

import torch

from . import data as D
from .analysis import analyze
from .checkpoint import load_checkpoint
from .config import RunConfig, load_config
from .model import VARIANTS, build_variant, count_parameters, count_training_only_parameters
from .train import evaluate, mean_metrics, train

log = logging.getLogger("mitnet")


def _config(path):
    return load_config(path) if path else RunConfig()


def cmd_train(args):
    cfg = _config(args.config)
    if args.out:
        cfg = cfg.with_overrides(output={"dir": args.out})
    res = train(cfg, resume=args.resume, max_iters=args.max_iters)
    print(f"trained to epoch {res.epoch} ({res.iteration} iterations); "
          f"psnr {res.last_psnr:.3f} ssim {res.last_ssim:.4f}; checkpoints in {res.out_dir}")


def _write_eval_csv(rows, path, config_hash):
    with open(path, "w", newline="") as f:
        f.write(f"# config_hash={config_hash}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "psnr", "ssim"])
        for r in rows:
            w.writerow([r[0], repr(D.log_psnr(r[1])), repr(r[2])])
        p, s = mean_metrics(rows)
        w.writerow(["mean", repr(p), repr(s)])


def cmd_eval(args):
    cfg, model, _ = load_checkpoint(args.ckpt)
    samples = D.load_dataset(args.data)
    rows = evaluate(model, samples)
    for name, p, s in rows:
        print(f"{name}\tpsnr {D.log_psnr(p):.3f}\tssim {s:.4f}")
    p, s = mean_metrics(rows)
    print(f"mean\tpsnr {p:.3f}\tssim {s:.4f}")
    out = Path(args.out or Path(args.ckpt).with_name("eval.csv"))
    _write_eval_csv(rows, out, cfg.hash())
    if args.dump:
        dump = Path(args.dump)
        dump.mkdir(parents=True, exist_ok=True)
        model.eval()
        with torch.no_grad():
            for s in samples:
                D.write_image(model(s.hazy.unsqueeze(0))[1].image[0], dump / f"{s.id}.png")


def cmd_infer(args):
    _, model, _ = load_checkpoint(args.ckpt)
    model.eval()
    with torch.no_grad():
        y = model(D.read_image(args.input).unsqueeze(0))[1].image[0]
    D.write_image(y, args.output)
    print(f"wrote {args.output}")


def run_ablation(cfg: RunConfig, names, out_dir, max_iters=None):
    """Train and evaluate each variant; returns the table rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in names:
        vcfg = cfg.with_overrides(
            model=build_variant(name, cfg.model).to_dict(),
            output={"dir": str(out_dir / name)},
        )
        res = train(vcfg, max_iters=max_iters)
        p, s = mean_metrics(evaluate(res.model, _val_samples(vcfg)))
        rows.append({
            "variant": name,
            "params": count_parameters(res.model),
            "train_only_params": count_training_only_parameters(res.model),
            "psnr": p,
            "ssim": s,
            "config_hash": vcfg.hash(),
        })
    with open(out_dir / "ablation.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    (out_dir / "ablation.md").write_text(format_table(rows))
    return rows


def _val_samples(cfg):
    from .train import load_samples

    return load_samples(cfg.data.val or cfg.data.train, cfg)


def format_table(rows):
    names = [r["variant"] for r in rows]
    lines = [
        "| Model | " + " | ".join(names) + " |",
        "|---|" + "---|" * len(names),
        "| #Params (M) | " + " | ".join(f"{r['params'] / 1e6:.2f}" for r in rows) + " |",
        "| PSNR (dB) | " + " | ".join(f"{r['psnr']:.2f}" for r in rows) + " |",
        "| SSIM | " + " | ".join(f"{r['ssim']:.4f}" for r in rows) + " |",
    ]
    return "\n".join(lines) + "\n"


def cmd_ablate(args):
    cfg = _config(args.config)
    names = [n.strip() for n in args.variants.split(",") if n.strip()]
    for n in names:
        if n not in VARIANTS:
            raise ValueError(f"unknown variant {n!r}; valid names: {', '.join(VARIANTS)}")
    out = args.out or str(Path(cfg.output.dir) / "ablation")
    rows = run_ablation(cfg, names, out, max_iters=args.max_iters)
    print(format_table(rows), end="")


def cmd_analyze(args):
    cfg, model, _ = load_checkpoint(args.ckpt)
    hazy, ref = D.read_image(args.image), D.read_image(args.ref)
    summary = analyze(model, hazy, ref, args.outdir, config_hash=cfg.hash())
    for k, v in summary.items():
        print(f"{k}: {v}")


def cmd_synth(args):
    samples = D.make_synthetic_pairs(args.n, args.size, args.seed)
    D.save_dataset(samples, args.out)
    print(f"wrote {len(samples)} pairs to {args.out}")


def build_parser():
    p = argparse.ArgumentParser(prog="mitnet", description="Two-stage spatial-frequency dehazing")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", help="override output.dir")
    t.add_argument("--max-iters", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on a paired folder")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="CSV path (default: eval.csv next to the checkpoint)")
    e.add_argument("--dump", help="folder for dehazed images")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="dehaze one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--in", dest="input", required=True)
    i.add_argument("--out", dest="output", required=True)
    i.set_defaults(func=cmd_infer)

    a = sub.add_parser("ablate", help="train and compare ablation variants")
    a.add_argument("--variants", default=",".join(VARIANTS))
    a.add_argument("--config")
    a.add_argument("--out")
    a.add_argument("--max-iters", type=int)
    a.set_defaults(func=cmd_ablate)

    z = sub.add_parser("analyze", help="histogram, disparity and feature diagnostics")
    z.add_argument("--ckpt", required=True)
    z.add_argument("--image", required=True)
    z.add_argument("--ref", required=True)
    z.add_argument("--outdir", required=True)
    z.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="write synthetic hazy/gt pairs")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as e:  # noqa: BLE001 - one machine-parsable line per failure
        msg = " ".join(str(e).split())
        print(f"error {type(e).__name__}: {msg}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
