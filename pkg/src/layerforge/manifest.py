"""On-disk dataset layout: PNG quadruplets plus a JSONL manifest.

Each manifest line references ``<id>_input.png``, ``<id>_layer0.png``,
``<id>_layer1.png`` (8-bit RGB) and ``<id>_alpha.png`` (16-bit gray), all
relative to the manifest's directory. ``synth_meta.json`` next to it records
what is needed to replay every sample (config, asset mode, sources).
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import imagecore as ic
from .assets import AssetLibrary, load_asset_dir, procedural_library
from .compositor import LayerSample, PlacementSpec, SynthConfig, recombine, synth_sample
from .degrade import DegradeSpec

MANIFEST_NAME = "manifest.jsonl"
META_NAME = "synth_meta.json"
RECOMBINE_TOL = 1e-5


class ManifestError(ValueError):
    pass


@dataclass
class ManifestRecord:
    id: str
    input: str
    layer0: str
    layer1: str
    alpha_map: str
    seed: int
    degrade: dict
    placements: list[dict] = field(default_factory=list)
    source: str = ""

    def to_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def paths(self) -> list[str]:
        return [self.input, self.layer0, self.layer1, self.alpha_map]


def threads() -> int:
    try:
        return max(1, int(os.environ.get("LAYERFORGE_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items):
    """Order-preserving map, parallel up to ``LAYERFORGE_THREADS`` workers."""
    n = threads()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def sample_seed(seed: int, index: int) -> int:
    state = np.random.SeedSequence([int(seed), 7000, int(index)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def list_sources(sources) -> list[Path]:
    root = Path(sources)
    if not root.is_dir():
        raise ManifestError(f"sources directory {root} does not exist")
    pages = sorted(root.glob("*.png"))
    if not pages:
        raise ManifestError(f"no PNG pages in {root}")
    return pages


def build_library(assets: str, seed: int, cfg: SynthConfig) -> AssetLibrary:
    if assets == "procedural":
        lib = procedural_library(seed, size=cfg.sprite_size, categories=cfg.categories)
    else:
        lib = load_asset_dir(assets)
    lib.require(cfg.categories)
    return lib


def write_sample(out: Path, sid: str, sample: LayerSample, source: str) -> ManifestRecord:
    rec = ManifestRecord(
        id=sid,
        input=f"{sid}_input.png",
        layer0=f"{sid}_layer0.png",
        layer1=f"{sid}_layer1.png",
        alpha_map=f"{sid}_alpha.png",
        seed=sample.seed,
        degrade=sample.degrade_spec.to_json(),
        placements=[p.to_json() for p in sample.placements],
        source=source,
    )
    ic.save_png(sample.input, out / rec.input)
    ic.save_png(sample.layer0, out / rec.layer0)
    ic.save_png(sample.layer1, out / rec.layer1)
    ic.save_gray_png(sample.alpha_map, out / rec.alpha_map, bits=16)
    return rec


def synthesize(sources, assets: str, out, cfg: SynthConfig, seed: int, count: int) -> list[ManifestRecord]:
    """Write ``count`` samples plus manifest and replay metadata into ``out``."""
    pages = list_sources(sources)
    lib = build_library(assets, seed, cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    loaded = {}

    def page(i):
        p = pages[i % len(pages)]
        if p not in loaded:
            loaded[p] = ic.load_png(p)
        return p, loaded[p]

    def one(i):
        p, img = page(i)
        s = synth_sample(img, lib, sample_seed(seed, i), cfg)
        return write_sample(out, f"{i:06d}", s, p.name)

    # page loading is cheap; keep it sequential so the cache is not raced
    for i in range(min(count, len(pages))):
        page(i)
    records = pmap(one, range(count))
    meta = {
        "assets": assets if assets == "procedural" else os.path.abspath(assets),
        "config": cfg.to_json(),
        "seed": int(seed),
        "sources": os.path.abspath(sources),
    }
    (out / META_NAME).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with open(out / MANIFEST_NAME, "w") as fh:
        for r in records:
            fh.write(r.to_line() + "\n")
    return records


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} not found")
    records, seen = [], set()
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = ManifestRecord(**json.loads(line))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ManifestError(f"{path}:{n}: {exc}") from exc
            if rec.id in seen:
                raise ManifestError(f"{path}:{n}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            for rel in rec.paths():
                if not (path.parent / rel).is_file():
                    raise ManifestError(f"{path}:{n}: missing file {rel}")
            records.append(rec)
    if not records:
        raise ManifestError(f"manifest {path} is empty")
    return records


def load_sample(root, rec: ManifestRecord) -> LayerSample:
    root = Path(root)
    return LayerSample(
        input=ic.load_png(root / rec.input),
        layer0=ic.load_png(root / rec.layer0),
        layer1=ic.load_png(root / rec.layer1),
        alpha_map=ic.load_gray_png(root / rec.alpha_map),
        placements=[PlacementSpec(**p) for p in rec.placements],
        seed=rec.seed,
        degrade_spec=DegradeSpec.from_json(rec.degrade),
    )


def load_samples(manifest) -> tuple[list[ManifestRecord], list[LayerSample]]:
    records = read_manifest(manifest)
    root = Path(manifest).parent
    return records, pmap(lambda r: load_sample(root, r), records)


def verify(out) -> list[str]:
    """Replay every record and check files and the recombination identity.

    Returns a list of problems (empty when the dataset is consistent).
    """
    out = Path(out)
    records = read_manifest(out / MANIFEST_NAME)
    try:
        meta = json.loads((out / META_NAME).read_text())
        cfg = SynthConfig.from_json(meta["config"])
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ManifestError(f"unreadable {META_NAME}: {exc}") from exc
    lib = build_library(meta["assets"], meta["seed"], cfg)

    def check(rec: ManifestRecord) -> list[str]:
        problems = []
        src = ic.load_png(Path(meta["sources"]) / rec.source)
        s = synth_sample(src, lib, rec.seed, cfg)
        err = float(np.max(np.abs(recombine(s.layer0, s.layer1, s.alpha_map) - s.composite)))
        if err > RECOMBINE_TOL:
            problems.append(f"{rec.id}: recombination error {err:.3g} > {RECOMBINE_TOL}")
        if s.degrade_spec.to_json() != rec.degrade:
            problems.append(f"{rec.id}: degradation spec differs from replay")
        if [p.to_json() for p in s.placements] != rec.placements:
            problems.append(f"{rec.id}: placements differ from replay")
        stored = load_sample(out, rec)
        for name, bits in (("input", 8), ("layer0", 8), ("layer1", 8), ("alpha_map", 16)):
            want = ic.quantize(getattr(s, name), bits)
            got = ic.quantize(getattr(stored, name), bits)
            if not np.array_equal(want, got):
                problems.append(f"{rec.id}: stored {name} differs from replay")
        return problems

    return [p for probs in pmap(check, records) for p in probs]
