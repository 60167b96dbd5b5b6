"""End-to-end run of the command line on procedural data.

Writes text-only source pages, synthesizes a dataset, trains briefly,
evaluates the best_l0 / best_l1 checkpoints and renders the comparison.

    python3 scripts/pipeline_demo.py --work runs/demo --steps 300
"""
import argparse
from pathlib import Path

from layerforge import assets, cli
from layerforge import imagecore as ic


def run(*argv):
    code = cli.main([str(a) for a in argv])
    if code:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", default="runs/demo")
    ap.add_argument("--pages", type=int, default=6)
    ap.add_argument("--count", type=int, default=40)
    ap.add_argument("--steps", type=int, default=300)
    args = ap.parse_args()

    work = Path(args.work)
    src = work / "sources"
    src.mkdir(parents=True, exist_ok=True)
    for i in range(args.pages):
        ic.save_png(assets.gen_text_page(1000 + i, 192, 160), src / f"page{i:02d}.png")

    run("synth", "--sources", src, "--out", work / "data", "--count", args.count, "--seed", 0, "--verify")
    run("train", "--manifest", work / "data" / "manifest.jsonl", "--out", work / "run",
        "--steps", args.steps, "--batch", 4, "--crop", 64, "--val-frac", 0.1)
    reports = []
    for suffix in ("best_l0", "best_l1"):
        out = work / "eval" / f"{suffix}.json"
        run("eval", "--manifest", work / "data" / "manifest.jsonl", "--checkpoint", work / "run" / f"model.{suffix}",
            "--out", out, "--method", f"Ours ({suffix.replace('best', 'Best').replace('_l', '_L')})")
        reports.append(out)
    run("report", "--inputs", *reports, "--out", work / "report.md")


if __name__ == "__main__":
    main()
