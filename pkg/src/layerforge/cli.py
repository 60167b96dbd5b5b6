"""``layerforge`` command line: synth, train, eval, infer, report.

Exit codes: 0 success, 2 missing/invalid input, 3 bad config/JSON,
4 geometry error, 5 bad checkpoint.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import imagecore as ic
from . import manifest as mf
from . import nnmodel as nn
from . import trainer as tr
from .assets import AssetError
from .compositor import ConfigError, SynthConfig
from .metrics import (
    LAYERS,
    AggregateReport,
    ReportRow,
    aggregate,
    evaluate_pair,
    layer_correlation,
    render_markdown,
)

log = logging.getLogger("layerforge")

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_CHECKPOINT = 0, 2, 3, 4, 5
CHECKPOINT_SUFFIXES = ("best_l0", "best_l1", "last")


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_model(path) -> nn.ModelState:
    try:
        return nn.load_checkpoint(path)
    except nn.CheckpointError as exc:
        raise CLIError(str(exc), EXIT_CHECKPOINT) from exc


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.sources is None:
        if not args.verify:
            raise CLIError("--sources is required unless only verifying", EXIT_INPUT)
    else:
        try:
            cfg = SynthConfig.load(args.config) if args.config else SynthConfig()
        except (ConfigError, OSError) as exc:
            raise CLIError(f"bad config: {exc}", EXIT_CONFIG) from exc
        try:
            records = mf.synthesize(args.sources, args.assets, out, cfg, args.seed, args.count)
        except mf.ManifestError as exc:
            raise CLIError(str(exc), EXIT_INPUT) from exc
        except AssetError as exc:
            raise CLIError(str(exc), EXIT_INPUT) from exc
        print(f"wrote {len(records)} samples to {out / mf.MANIFEST_NAME}")
    if args.verify:
        try:
            problems = mf.verify(out)
        except (mf.ManifestError, ConfigError, AssetError) as exc:
            raise CLIError(str(exc), EXIT_INPUT) from exc
        for p in problems:
            print(p, file=sys.stderr)
        if problems:
            return EXIT_INPUT
        print("verify: all records pass")
    return EXIT_OK


def split_validation(n: int, val_frac: float) -> tuple[list[int], list[int]]:
    """Last ``round(val_frac * n)`` records validate; with none left over, train set doubles as val."""
    n_val = int(round(val_frac * n))
    if n_val <= 0 or n_val >= n:
        idx = list(range(n))
        return idx, idx
    return list(range(n - n_val)), list(range(n - n_val, n))


def cmd_train(args) -> int:
    try:
        _, samples = mf.load_samples(args.manifest)
    except (mf.ManifestError, ic.ImageError, OSError) as exc:
        raise CLIError(f"invalid manifest: {exc}", EXIT_INPUT) from exc
    try:
        cfg = tr.TrainConfig(
            lr=args.lr,
            steps=args.steps,
            batch=args.batch,
            crop=args.crop,
            seed=args.seed,
            val_every=args.val_every,
            base_channels=args.base_channels,
        )
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_CONFIG) from exc
    train_idx, val_idx = split_validation(len(samples), args.val_frac)
    try:
        ck = tr.train([samples[i] for i in train_idx], [samples[i] for i in val_idx], cfg)
    except tr.GeometryError as exc:
        raise CLIError(str(exc), EXIT_GEOMETRY) from exc
    write_run(Path(args.out), ck, cfg)
    print(
        f"best_l0 val {ck.best_l0_val:.5f} (step {ck.best_l0_step}), "
        f"best_l1 val {ck.best_l1_val:.5f} (step {ck.best_l1_step})"
    )
    return EXIT_OK


def write_run(out: Path, ck: tr.CheckpointSet, cfg: tr.TrainConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for suffix, model in zip(CHECKPOINT_SUFFIXES, (ck.best_l0, ck.best_l1, ck.last)):
        nn.save_checkpoint(model, out / f"model.{suffix}")
    with open(out / "history.jsonl", "w") as fh:
        for entry in ck.history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    summary = {
        "config": tr.config_dict(cfg),
        "best_l0": {"step": ck.best_l0_step, "val_l0": ck.best_l0_val},
        "best_l1": {"step": ck.best_l1_step, "val_l1": ck.best_l1_val},
        "validation": ck.val_log,
    }
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def evaluate_manifest(manifest, model: nn.ModelState, method: str) -> dict:
    records, samples = mf.load_samples(manifest)

    def one(pair):
        rec, s = pair
        p0, p1 = tr.infer(model, s.input)
        metrics = evaluate_pair((p0, p1), (s.layer0, s.layer1))
        return {
            "id": rec.id,
            "metrics": [m.to_json() for m in metrics],
            "layer_correlation": layer_correlation(p0, p1),
        }, metrics

    results = mf.pmap(one, list(zip(records, samples)))
    groups = {layer: [m for _, ms in results for m in ms if m.layer == layer] for layer in LAYERS}
    agg = aggregate(groups)
    return {
        "method": method,
        "count": len(results),
        "aggregate": {r.method: _row_json(r) for r in agg.rows},
        "mean_layer_correlation": float(np.mean([r["layer_correlation"] for r, _ in results])),
        "records": [r for r, _ in results],
    }


def _row_json(r: ReportRow) -> dict:
    return {"psnr_color": r.psnr_color, "psnr_illum": r.psnr_illum, "ssim": r.ssim, "count": r.count}


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    method = args.method or Path(args.checkpoint).name
    try:
        result = evaluate_manifest(args.manifest, model, method)
    except (mf.ManifestError, ic.ImageError, OSError) as exc:
        raise CLIError(f"invalid manifest: {exc}", EXIT_INPUT) from exc
    except nn.ShapeError as exc:
        raise CLIError(str(exc), EXIT_CHECKPOINT) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    rows = [ReportRow(f"{method} ({layer})", **result["aggregate"][layer]) for layer in LAYERS]
    md = render_markdown(AggregateReport(rows))
    out.with_suffix(".md").write_text(md)
    print(md, end="")
    return EXIT_OK


def cmd_infer(args) -> int:
    try:
        img = ic.load_png(args.image)
    except (FileNotFoundError, ic.ImageError) as exc:
        raise CLIError(f"unreadable image: {exc}", EXIT_INPUT) from exc
    model = _load_model(args.checkpoint)
    l0, l1 = tr.infer(model, img)
    prefix = str(args.out_prefix)
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    ic.save_png(l0, f"{prefix}_layer0.png")
    ic.save_png(l1, f"{prefix}_layer1.png")
    print(f"wrote {prefix}_layer0.png and {prefix}_layer1.png")
    return EXIT_OK


def report_rows(paths) -> dict[str, list[ReportRow]]:
    """Group rows by layer grouping; flat files land in the ``reported`` group."""
    groups: dict[str, list[ReportRow]] = {}
    for path in paths:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise CLIError(f"missing metrics file {path}", EXIT_INPUT) from exc
        except json.JSONDecodeError as exc:
            raise CLIError(f"malformed JSON in {path}: {exc}", EXIT_CONFIG) from exc
        try:
            method = data.get("method") or Path(path).stem
            if "aggregate" in data:
                parts = data["aggregate"].items()
            else:
                parts = [("reported", data)]
            for group, vals in parts:
                row = ReportRow(
                    method,
                    float(vals["psnr_color"]),
                    float(vals["psnr_illum"]),
                    float(vals["ssim"]),
                    int(vals.get("count", 1)),
                )
                groups.setdefault(group, []).append(row)
        except (AttributeError, KeyError, TypeError, ValueError) as exc:
            raise CLIError(f"malformed metrics in {path}: {exc}", EXIT_CONFIG) from exc
    return groups


def render_report(groups: dict[str, list[ReportRow]]) -> str:
    if len(groups) == 1:
        return render_markdown(AggregateReport(next(iter(groups.values()))))
    order = [g for g in LAYERS if g in groups] + [g for g in groups if g not in LAYERS]
    parts = [f"### {g}\n\n" + render_markdown(AggregateReport(groups[g])) for g in order]
    return "\n".join(parts)


def cmd_report(args) -> int:
    md = render_report(report_rows(args.inputs))
    if args.out:
        Path(args.out).write_text(md)
    print(md, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="layerforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a two-layer dataset")
    s.add_argument("--sources", help="directory of text-only page PNGs")
    s.add_argument("--assets", default="procedural", help='asset directory or "procedural"')
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="SynthConfig JSON")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--verify", action="store_true", help="replay and check every record")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the two-layer model")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=1000)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch", type=int, default=4)
    t.add_argument("--crop", type=int, default=64)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--val-frac", type=float, default=0.1)
    t.add_argument("--val-every", type=int, default=100)
    t.add_argument("--base-channels", type=int, default=16)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True, help="metrics JSON path; markdown goes next to it")
    e.add_argument("--method", help="row label (default: checkpoint file name)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="separate one image into two layers")
    i.add_argument("--image", required=True)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--out-prefix", required=True)
    i.set_defaults(func=cmd_infer)

    r = sub.add_parser("report", help="render metrics files as a markdown table")
    r.add_argument("--inputs", nargs="+", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
