"""Desk-scale overfit run: synthesized 64x64 pages, held-out validation pages.

    python3 scripts/overfit_experiment.py --steps 2000 --out runs/overfit
"""
import argparse
import json
import time
from pathlib import Path

from layerforge import assets, cli
from layerforge import nnmodel as nn
from layerforge import trainer as tr
from layerforge.compositor import SynthConfig, synth_sample


def make_samples(seeds, size):
    cfg = SynthConfig(output_size=(size, size))
    lib = assets.procedural_library(0, size=cfg.sprite_size)
    return [synth_sample(assets.gen_text_page(i, size, size), lib, i, cfg) for i in seeds]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--train", type=int, default=8)
    ap.add_argument("--val", type=int, default=4)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/overfit")
    args = ap.parse_args()

    train = make_samples(range(args.train), args.size)
    val = make_samples(range(100, 100 + args.val), args.size)
    cfg = tr.TrainConfig(
        lr=args.lr, steps=args.steps, batch=args.batch, crop=args.size, seed=args.seed, val_every=100
    )
    t0 = time.perf_counter()
    ck = tr.train(train, val, cfg)
    elapsed = time.perf_counter() - t0

    out = Path(args.out)
    cli.write_run(out, ck, cfg)
    summary = {"seconds": elapsed, "first_loss": ck.history[0]["total"] if ck.history else None}
    for name in ("best_l0", "best_l1", "last"):
        model: nn.ModelState = getattr(ck, name)
        summary[name] = {
            split: {layer: tr.mean_records(tr.validate(model, data)[2], layer) for layer in ("L0", "L1")}
            for split, data in (("train", train), ("val", val))
        }
    (out / "overfit_metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
