import json
import os

import numpy as np
import pytest

from neuralut import cli
from neuralut.lutgen import LutLayer, LutNetwork, save_bundle
from neuralut.quantization import Quantizer

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")


@pytest.fixture
def toy_config(tmp_path):
    doc = {
        "seed": 0,
        "model": {"layers": [6, 2], "beta": 2, "fan_in": 2, "exceptions": {"0": {"beta": 4}},
                  "subnet": {"L": 2, "N": 4, "S": 2}},
        "train": {"epochs": 3, "batch_size": 32},
        "data": {"kind": "semicircles", "n_per_class": 100},
    }
    p = tmp_path / "toy.json"
    p.write_text(json.dumps(doc))
    return p


def test_params_hdr5l(capsys):
    assert cli.main(["params", "--config", os.path.join(CONFIGS, "hdr5l.json")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split("\t") == ["layer", "width", "F", "beta", "L", "N", "S",
                                    "T_A", "T_R", "T_N", "layer_total"]
    row = lines[1].split("\t")
    assert row[2:10] == ["6", "2", "4", "16", "2", "673", "129", "802"]
    assert lines[-1] == f"total\t{802 * 566}"


def test_full_chain(toy_config, tmp_path, capsys):
    ck, tb, rtl = tmp_path / "m.ckpt", tmp_path / "t.bin", tmp_path / "rtl"
    assert cli.main(["train", "--config", str(toy_config), "--out", str(ck)]) == 0
    assert (tmp_path / "m.ckpt.history.tsv").read_text().startswith("epoch\tloss")
    assert cli.main(["convert", str(ck), "--out", str(tb), "--text", str(tmp_path / "t.txt")]) == 0
    assert cli.main(["check", str(ck), str(tb), "--samples", "2000"]) == 0
    assert "equivalence CLEAN" in capsys.readouterr().out
    assert cli.main(["emit", str(tb), "--out", str(rtl)]) == 0
    assert sorted(os.listdir(rtl)) == ["layer0.v", "layer1.v", "manifest.txt", "top.v"]
    manifest = (rtl / "manifest.txt").read_text()
    effective = json.loads(manifest.split("config ", 1)[1])
    assert effective["train"]["lr_max"] == 0.01 and effective["seed"] == 0
    for artifact in (ck, tb):
        assert cli.main(["eval", str(artifact), "--config", str(toy_config)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-2].split()[2] == out[-1].split()[2]  # model and netlist accuracy agree

    feats = tmp_path / "x.txt"
    feats.write_text("0.5 0.2\n-1 0.3\n")
    assert cli.main(["simulate", str(tb), str(feats), "--mode", "features",
                     "--out", str(tmp_path / "o.txt"), "--predictions", str(tmp_path / "p.txt")]) == 0
    assert len((tmp_path / "p.txt").read_text().split()) == 2


def test_seed_override_changes_checkpoint(toy_config, tmp_path):
    a, b, c = (tmp_path / n for n in ("a", "b", "c"))
    assert cli.main(["train", "--config", str(toy_config), "--out", str(a)]) == 0
    assert cli.main(["train", "--config", str(toy_config), "--out", str(b)]) == 0
    assert cli.main(["train", "--config", str(toy_config), "--out", str(c), "--seed", "1"]) == 0
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()


def test_check_mismatch_exit_code(toy_config, tmp_path):
    from neuralut.lutgen import load_bundle
    ck, tb = tmp_path / "m.ckpt", tmp_path / "t.bin"
    cli.main(["train", "--config", str(toy_config), "--out", str(ck)])
    cli.main(["convert", str(ck), "--out", str(tb)])
    net = load_bundle(tb)
    net.layers[0].entries[0, 0] ^= 1
    save_bundle(net, tb)
    assert cli.main(["check", str(ck), str(tb), "--samples", "100", "--out", str(tmp_path / "r")]) == 2
    assert "mismatch layer=0 node=0 index=0" in (tmp_path / "r").read_text()


def test_simulate_identity(tmp_path):
    net = LutNetwork(1, Quantizer(2, 1.0, True),
                     [LutLayer(np.array([[0]]), 2, 2, np.arange(4, dtype=np.uint8)[None])])
    tb = tmp_path / "id.bin"
    save_bundle(net, tb)
    inp = tmp_path / "in.txt"
    inp.write_text("0\n3\n1\n2\n")
    assert cli.main(["simulate", str(tb), str(inp), "--out", str(tmp_path / "out.txt")]) == 0
    assert (tmp_path / "out.txt").read_text() == inp.read_text()
    inp.write_text("7\n")
    assert cli.main(["simulate", str(tb), str(inp), "--out", str(tmp_path / "out.txt")]) == 1


def test_exit_codes(tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["params"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"layers": [2], "beta": 2, "fan_in": 1, "nope": 0}}))
    assert cli.main(["params", "--config", str(bad)]) == 1
    assert "model" in capsys.readouterr().err
    assert cli.main(["convert", str(tmp_path / "missing.ckpt"), "--out", str(tmp_path / "x")]) == 3
    assert "missing.ckpt" in capsys.readouterr().err
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"garbage!" * 4)
    assert cli.main(["emit", str(junk), "--out", str(tmp_path / "r")]) == 3


def test_shipped_configs_validate():
    from neuralut import config
    for name in sorted(os.listdir(CONFIGS)):
        config.load_config(os.path.join(CONFIGS, name))
