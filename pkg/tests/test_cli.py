import json

import numpy as np
import pytest

from layerforge import assets, cli
from layerforge import imagecore as ic
from layerforge import nnmodel as nn
from layerforge import trainer as tr

FIXTURES = __import__("pathlib").Path(__file__).parent / "fixtures"


@pytest.fixture(scope="module")
def sources(tmp_path_factory):
    d = tmp_path_factory.mktemp("sources")
    for i in range(2):
        ic.save_png(assets.gen_text_page(i, 48, 48), d / f"page{i}.png")
    return d


def synth(sources, out, *extra):
    return cli.main(["synth", "--sources", str(sources), "--out", str(out), *extra])


def write_config(path, **kw):
    cfg = {"output_size": [32, 32]}
    cfg.update(kw)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def dataset(sources, tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    cfgp = write_config(root / "cfg.json")
    assert synth(sources, root / "out", "--config", str(cfgp), "--count", "4", "--seed", "1") == 0
    return root / "out"


def test_synth_single_record(sources, tmp_path):
    cfgp = write_config(tmp_path / "c.json")
    assert synth(sources, tmp_path / "o", "--config", str(cfgp), "--count", "1") == 0
    assert len(list((tmp_path / "o").glob("*.png"))) == 4
    lines = (tmp_path / "o" / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert {"id", "input", "layer0", "layer1", "alpha_map", "seed", "degrade", "placements"} <= set(rec)


def test_synth_deterministic(sources, tmp_path):
    cfgp = write_config(tmp_path / "c.json")
    for name in ("a", "b"):
        assert synth(sources, tmp_path / name, "--config", str(cfgp), "--count", "3", "--seed", "7") == 0
    for f in sorted((tmp_path / "a").iterdir()):
        if f.name != "synth_meta.json":
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_synth_verify(dataset, capsys):
    assert cli.main(["synth", "--out", str(dataset), "--verify"]) == 0
    assert "all records pass" in capsys.readouterr().out


def test_verify_detects_tampering(sources, tmp_path):
    cfgp = write_config(tmp_path / "c.json")
    synth(sources, tmp_path / "o", "--config", str(cfgp), "--count", "2")
    target = tmp_path / "o" / "000001_layer1.png"
    ic.save_png(np.zeros((32, 32, 3), np.float32), target)
    assert cli.main(["synth", "--out", str(tmp_path / "o"), "--verify"]) == 2


def test_synth_errors(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert synth(empty, tmp_path / "o") == 2
    (tmp_path / "bad.json").write_text("{not json")
    page_dir = tmp_path / "p"
    page_dir.mkdir()
    ic.save_png(np.ones((32, 32, 3), np.float32), page_dir / "x.png")
    assert synth(page_dir, tmp_path / "o", "--config", str(tmp_path / "bad.json")) == 3
    write_config(tmp_path / "range.json", count_range=[0, 99])
    assert synth(page_dir, tmp_path / "o", "--config", str(tmp_path / "range.json")) == 3


def train(dataset, out, *extra):
    args = ["train", "--manifest", str(dataset / "manifest.jsonl"), "--out", str(out)]
    args += ["--crop", "16", "--batch", "2", "--base-channels", "4", "--val-frac", "0.25", "--seed", "2"]
    return cli.main(args + list(extra))


def test_train_artifacts(dataset, tmp_path):
    assert train(dataset, tmp_path / "run", "--steps", "5", "--val-every", "2") == 0
    for suffix in cli.CHECKPOINT_SUFFIXES:
        nn.load_checkpoint(tmp_path / "run" / f"model.{suffix}")
    history = (tmp_path / "run" / "history.jsonl").read_text().splitlines()
    assert len(history) == 5
    assert json.loads(history[-1])["step"] == 5


def test_train_deterministic(dataset, tmp_path):
    for name in ("a", "b"):
        assert train(dataset, tmp_path / name, "--steps", "4", "--val-every", "2") == 0
    for f in ("history.jsonl", "model.best_l0", "model.best_l1", "model.last"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_dry_run(dataset, tmp_path):
    assert train(dataset, tmp_path / "r", "--steps", "0") == 0
    init = nn.init_model(nn.ModelConfig(4), seed=2)
    for suffix in ("best_l0", "best_l1"):
        assert nn.load_checkpoint(tmp_path / "r" / f"model.{suffix}").equals(init)
    assert (tmp_path / "r" / "history.jsonl").read_text() == ""


def test_train_errors(dataset, tmp_path):
    assert train(dataset, tmp_path / "r", "--crop", "64") == 4
    assert cli.main(["train", "--manifest", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "r")]) == 2
    assert train(dataset, tmp_path / "r", "--crop", "12") == 3


def test_split_validation():
    assert cli.split_validation(10, 0.1) == (list(range(9)), [9])
    assert cli.split_validation(4, 0.1) == ([0, 1, 2, 3], [0, 1, 2, 3])


def test_eval_with_oracle(sources, tmp_path, oracle_model):
    cfgp = write_config(tmp_path / "c.json", count_range=[0, 0], shadow=False, color_shift=False)
    synth(sources, tmp_path / "ds", "--config", str(cfgp), "--count", "3")
    nn.save_checkpoint(oracle_model(4), tmp_path / "oracle.ckpt")
    out = tmp_path / "eval" / "m.json"
    args = ["eval", "--manifest", str(tmp_path / "ds" / "manifest.jsonl"), "--checkpoint"]
    assert cli.main(args + [str(tmp_path / "oracle.ckpt"), "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["count"] == len(res["records"]) == 3
    for layer in ("L0", "L1", "combined"):
        assert res["aggregate"][layer]["ssim"] == pytest.approx(1.0)
    assert out.with_suffix(".md").read_text().startswith("| Method |")


def test_eval_errors(dataset, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nope")
    m = str(dataset / "manifest.jsonl")
    assert cli.main(["eval", "--manifest", m, "--checkpoint", str(bad), "--out", str(tmp_path / "e.json")]) == 5


def test_infer_matches_api(dataset, tmp_path):
    model = nn.init_model(nn.ModelConfig(4), seed=1)
    ckpt = tmp_path / "m.ckpt"
    nn.save_checkpoint(model, ckpt)
    img = tmp_path / "in.png"
    ic.save_png(assets.gen_text_page(3, 36, 44), img)
    prefix = tmp_path / "out" / "x"
    assert cli.main(["infer", "--image", str(img), "--checkpoint", str(ckpt), "--out-prefix", str(prefix)]) == 0
    l0, l1 = tr.infer(model, ic.load_png(img))
    for layer, arr in (("layer0", l0), ("layer1", l1)):
        got = ic.load_png(f"{prefix}_{layer}.png")
        assert got.shape == (36, 44, 3)
        np.testing.assert_array_equal(ic.quantize(got), ic.quantize(arr))
    first = (tmp_path / "out" / "x_layer0.png").read_bytes()
    cli.main(["infer", "--image", str(img), "--checkpoint", str(ckpt), "--out-prefix", str(prefix)])
    assert (tmp_path / "out" / "x_layer0.png").read_bytes() == first
    assert cli.main(["infer", "--image", str(tmp_path / "no.png"), "--checkpoint", str(ckpt), "--out-prefix", "y"]) == 2


def test_report_reference_rows(tmp_path):
    inputs = [str(FIXTURES / "reference_rows" / f) for f in ("docres.json", "best_l0.json", "best_l1.json")]
    out = tmp_path / "t.md"
    assert cli.main(["report", "--inputs", *inputs, "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "| Method | PSNR(color) ↑ | PSNR(ilum) ↑ | SSIM ↑ |"
    assert lines[2:] == [
        "| DocRes | 21.2469 | 22.8686 | <u>0.9145</u> |",
        "| Ours (Best_L0) | **23.4026** | **25.0724** | **0.9273** |",
        "| Ours (Best_L1) | <u>21.8596</u> | <u>23.3913</u> | 0.9034 |",
    ]


def test_report_single_row(tmp_path):
    out = tmp_path / "t.md"
    assert cli.main(["report", "--inputs", str(FIXTURES / "reference_rows" / "docres.json"), "--out", str(out)]) == 0
    row = out.read_text().splitlines()[2]
    assert row.count("**") == 6 and "<u>" not in row


def test_report_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert cli.main(["report", "--inputs", str(bad)]) == 3
    assert cli.main(["report", "--inputs", str(tmp_path / "missing.json")]) == 2
