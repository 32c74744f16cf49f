import hashlib
import json
from pathlib import Path

import pytest

from asyncfield import cli
from asyncfield.data import dataset_io
from asyncfield.learning import FieldModel, checkpoint
from asyncfield.runconfig import RunConfig, builtin_text


def _cfg_text(**over):
    lines = builtin_text("desk").splitlines()
    keys = {k for k in over}
    lines = [ln for ln in lines if ln.split("=", 1)[0].strip() not in keys]
    lines += [f"{k} = {v}" for k, v in over.items()]
    return "\n".join(lines) + "\n"


TINY = {"gen.n_train": 6, "gen.n_test": 4, "gen.n_frames": 6, "train.epochs": 1,
        "train.batch_size": 12, "train.h_mode": 5, "train.learning_rate": 0.01}


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "tiny.cfg"
    cfg.write_text(_cfg_text(**TINY))
    gen = d / "gen"
    assert cli.main(["generate", "--config", str(cfg), "--seed", "3", "--out", str(gen)]) == 0
    return d, cfg, gen


def _run(*argv):
    return cli.main([str(a) for a in argv])


def _sha(p):
    return hashlib.sha256(Path(p).read_bytes()).hexdigest()


def test_generate_outputs_and_determinism(tiny, tmp_path):
    d, cfg, gen = tiny
    assert sorted(p.name for p in gen.iterdir()) == ["dataset.jsonl", "generator.ckpt.json",
                                                     "manifest.json"]
    assert _run("generate", "--config", cfg, "--seed", 3, "--out", tmp_path) == 0
    for name in ("dataset.jsonl", "generator.ckpt.json"):
        assert _sha(gen / name) == _sha(tmp_path / name)
    man = json.loads((gen / "manifest.json").read_text())
    assert man["command"] == "generate" and man["seed"] == 3
    assert man["outputs"]["dataset.jsonl"] == _sha(gen / "dataset.jsonl")
    assert RunConfig.loads(man["config"]).gen.n_train == 6
    ds = dataset_io.load(gen / "dataset.jsonl")
    assert len(ds.train) == 6 and len(ds.test) == 4


def test_invalid_config_writes_nothing(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text(_cfg_text(n_progress=4))
    out = tmp_path / "o"
    assert _run("generate", "--config", bad, "--out", out) != 0
    assert not out.exists()
    assert _run("generate", "--config", tmp_path / "missing.cfg", "--out", out) == 2
    assert _run("generate", "--config", bad) == 2     # no --out
    assert not out.exists()


def test_train_zero_lr_keeps_init(tiny, tmp_path):
    d, cfg, gen = tiny
    data = gen / "dataset.jsonl"
    assert _run("train", "--config", cfg, "--data", data, "--seed", 4, "--lr", 0,
                "--out", tmp_path / "a") == 0
    ds = dataset_io.load(data)
    rc = RunConfig.load(cfg)
    init = FieldModel.init(ds.space, ds.feature_dim, seed=4, **rc.model_kw())
    assert (tmp_path / "a" / "model.ckpt.json").read_text() == checkpoint.dumps(init)
    log = (tmp_path / "a" / "train_log.jsonl").read_text().splitlines()
    assert json.loads(log[-1])["kind"] == "eval"
    # starting from a checkpoint with lr 0 reproduces it
    assert _run("train", "--config", cfg, "--data", data, "--lr", 0, "--init",
                gen / "generator.ckpt.json", "--out", tmp_path / "b") == 0
    got = json.loads((tmp_path / "b" / "model.ckpt.json").read_text())
    want = json.loads((gen / "generator.ckpt.json").read_text())
    assert got.pop("weight_decay") == RunConfig.load(cfg).train.weight_decay
    want.pop("weight_decay")
    assert got == want


def test_train_modes_and_variants(tiny, tmp_path):
    d, cfg, gen = tiny
    data = gen / "dataset.jsonl"
    outs = {}
    for name, extra in (("async", []), ("sync", ["--sync"]), ("dist", ["--distributed"]),
                        ("nop", ["--no-pairwise"]), ("var", ["--variant", "no_pairwise"])):
        assert _run("train", "--config", cfg, "--data", data, *extra, "--out", tmp_path / name) == 0
        outs[name] = (tmp_path / name / "model.ckpt.json").read_text()
    assert outs["async"] == outs["dist"]
    assert outs["async"] != outs["sync"]
    assert outs["nop"] == outs["var"]
    assert json.loads(outs["nop"])["variant"] == "no_pairwise"
    assert _run("train", "--config", cfg, "--data", data, "--no-intent", "--semantic-only",
                "--out", tmp_path / "x") == 2
    assert _run("train", "--config", cfg, "--data", data, "--sync", "--distributed",
                "--out", tmp_path / "y") == 2
    assert not (tmp_path / "x").exists() and not (tmp_path / "y").exists()


def test_train_failure_exit_one(tiny, tmp_path):
    d, cfg, gen = tiny
    with pytest.warns(RuntimeWarning):
        code = _run("train", "--config", cfg, "--data", gen / "dataset.jsonl", "--lr", 1e308,
                    "--out", tmp_path / "f")
    assert code == 1 and not (tmp_path / "f").exists()


def test_eval_outputs_and_post_process(tiny, tmp_path):
    d, cfg, gen = tiny
    args = ["eval", "--config", cfg, "--checkpoint", gen / "generator.ckpt.json",
            "--data", gen / "dataset.jsonl"]
    assert _run(*args, "--out", tmp_path / "plain") == 0
    assert _run(*args, "--post-process", "--out", tmp_path / "post") == 0
    names = sorted(p.name for p in (tmp_path / "plain").iterdir())
    assert names == ["classification_ap.tsv", "localization_ap.tsv", "manifest.json", "metrics.json"]
    a, b = tmp_path / "plain", tmp_path / "post"
    assert (a / "classification_ap.tsv").read_text() == (b / "classification_ap.tsv").read_text()
    assert (a / "localization_ap.tsv").read_text() != (b / "localization_ap.tsv").read_text()
    m = json.loads((b / "metrics.json").read_text())
    assert m["post_process"] is True and m["split"] == "test" and m["n_videos"] == 4
    assert _run(*args, "--task", "classification", "--out", tmp_path / "c") == 0
    assert not (tmp_path / "c" / "localization_ap.tsv").exists()


def test_eval_mismatch_and_missing(tiny, tmp_path):
    d, cfg, gen = tiny
    other = tmp_path / "other.cfg"
    other.write_text(builtin_text("desk").replace("n_intent = 3", "n_intent = 2"))
    assert _run("generate", "--config", other, "--out", tmp_path / "g2") == 0
    code = _run("eval", "--config", cfg, "--checkpoint", gen / "generator.ckpt.json",
                "--data", tmp_path / "g2" / "dataset.jsonl", "--out", tmp_path / "e")
    assert code == 2 and not (tmp_path / "e").exists()
    assert _run("eval", "--config", cfg, "--checkpoint", tmp_path / "nope.json",
                "--out", tmp_path / "e") == 2
    assert _run("eval", "--config", cfg, "--out", tmp_path / "e") == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{}\n")
    assert _run("eval", "--config", cfg, "--checkpoint", gen / "generator.ckpt.json",
                "--data", bad, "--out", tmp_path / "e") == 2
    assert not (tmp_path / "e").exists()


def test_inputs_not_mutated(tiny, tmp_path):
    d, cfg, gen = tiny
    files = [cfg, gen / "dataset.jsonl", gen / "generator.ckpt.json"]
    before = [_sha(f) for f in files]
    _run("train", "--config", cfg, "--data", gen / "dataset.jsonl", "--init",
         gen / "generator.ckpt.json", "--out", tmp_path / "t")
    _run("eval", "--config", cfg, "--checkpoint", gen / "generator.ckpt.json",
         "--data", gen / "dataset.jsonl", "--out", tmp_path / "e")
    assert [_sha(f) for f in files] == before


def test_gradcheck_command(tmp_path, capsys):
    assert _run("gradcheck", "--models", 2, "--seed", 1, "--out", tmp_path / "ok") == 0
    text = (tmp_path / "ok" / "gradcheck.txt").read_text()
    assert text.startswith("PASS models=2")
    assert _run("gradcheck", "--models", 1, "--inject-fault", "mu_sign",
                "--out", tmp_path / "bad") == 1
    assert _run("gradcheck", "--models", 1, "--max-states", 10, "--out", tmp_path / "big") == 2
    assert not (tmp_path / "big").exists()
    capsys.readouterr()
    assert _run("gradcheck", "--models", 1) == 0
    assert "PASS" in capsys.readouterr().out


def test_oracle_compare_command(tmp_path):
    assert _run("oracle-compare", "--models", 4, "--out", tmp_path) == 0
    rows = (tmp_path / "oracle_compare.tsv").read_text().splitlines()
    assert rows[0].startswith("model\tT\tK") and len(rows) == 5
    for r in rows[1:]:
        f = r.split("\t")
        assert float(f[6]) >= -1e-12            # KL
        assert float(f[7]) <= float(f[8]) + 1e-9  # ELBO <= log Z
        if f[4] == "1":
            assert float(f[5]) < 1e-8


def test_infer_command(tiny, tmp_path):
    d, cfg, gen = tiny
    assert _run("infer", "--config", cfg, "--checkpoint", gen / "generator.ckpt.json",
                "--data", gen / "dataset.jsonl", "--video", "syn6", "--out", tmp_path) == 0
    text = (tmp_path / "trace_syn6.txt").read_text()
    assert text.startswith("# video syn6 passes")
    assert "# pass 1 delta" in text
    assert _run("infer", "--config", cfg, "--checkpoint", gen / "generator.ckpt.json",
                "--data", gen / "dataset.jsonl", "--video", "zzz", "--out", tmp_path / "n") == 2


def test_ablate_command(tiny, tmp_path):
    d, cfg, gen = tiny
    assert _run("ablate", "--config", cfg, "--data", gen / "dataset.jsonl", "--variants",
                "full,semantic_only", "--seeds", 2, "--out", tmp_path) == 0
    runs = (tmp_path / "ablation_runs.tsv").read_text().splitlines()
    assert runs[0] == "variant\tseed\tmetric\tvalue" and len(runs) == 5
    summ = (tmp_path / "ablation_summary.tsv").read_text().splitlines()
    assert [s.split("\t")[0] for s in summ] == ["variant", "full", "semantic_only"]
    assert _run("ablate", "--config", cfg, "--variants", "bogus", "--out", tmp_path / "b") == 2


def test_replay(tiny, tmp_path):
    d, cfg, gen = tiny
    run = tmp_path / "run"
    assert _run("train", "--config", cfg, "--data", gen / "dataset.jsonl", "--seed", 2,
                "--out", run) == 0
    assert _run("--replay", run / "manifest.json", "--out", tmp_path / "again") == 0
    assert _sha(run / "model.ckpt.json") == _sha(tmp_path / "again" / "model.ckpt.json")
    man = json.loads((run / "manifest.json").read_text())
    man["outputs"]["model.ckpt.json"] = "0" * 64
    tampered = tmp_path / "tampered.json"
    tampered.write_text(json.dumps(man))
    assert _run("--replay", tampered, "--out", tmp_path / "third") == 3
    assert _run("--replay", tmp_path / "missing.json", "--out", tmp_path / "x") == 2


def test_high_snr_generator_scores_well(tmp_path):
    cfg = tmp_path / "snr.cfg"
    cfg.write_text(_cfg_text(**{"gen.snr": 4.0, "gen.n_train": 2, "gen.n_test": 40,
                                "gen.video_offset": 0.0}))
    assert _run("generate", "--config", cfg, "--out", tmp_path / "g") == 0
    assert _run("eval", "--config", cfg, "--checkpoint", tmp_path / "g" / "generator.ckpt.json",
                "--data", tmp_path / "g" / "dataset.jsonl", "--task", "classification",
                "--out", tmp_path / "e") == 0
    m = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert m["classification_map"] >= 0.95
