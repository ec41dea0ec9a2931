import dataclasses

import pytest

from ecg_sbncl import cli
from ecg_sbncl.config import PRESETS, ConfigError, RunConfig, load_config, parse_config
from ecg_sbncl.evaluation import read_embeddings
from ecg_sbncl.vit1d import ModelConfig

TINY_INI = """
[model]
model_dim = 8
n_blocks = 1
n_heads = 2
[train]
iterations = 6
batch_size = 4
eval_every = 3
"""


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_defaults_match_dataclasses():
    cfg = load_config("table1")
    assert cfg == RunConfig(train=dataclasses.replace(cfg.train, checkpoint_every=500))
    assert cfg.model == ModelConfig()


def test_desk_preset_overrides_only_listed_keys():
    desk, base = load_config("desk"), load_config("table1")
    assert (desk.model.model_dim, desk.model.n_blocks, desk.model.n_heads) == (32, 2, 4)
    assert desk.model.patch_size == base.model.patch_size and desk.ssl == base.ssl
    assert set(PRESETS) == {"table1", "desk"}


def test_round_trip_text():
    cfg = load_config("desk").with_seed(9)
    assert parse_config(cfg.to_text()) == cfg


@pytest.mark.parametrize(
    "text",
    ["[model]\nmodel_dimm = 8\n", "[optimizer]\nlr = 1\n", "[model]\nn_blocks = two\n", "[eval]\ngroup_by_subject = maybe\n"],
)
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_optional_auto():
    cfg = parse_config("[heads]\nprojector_hidden = auto\npredictor_out = 16\n")
    assert cfg.heads.projector_hidden is None and cfg.heads.predictor_out == 16


def test_load_from_path(tmp_path):
    (tmp_path / "c.ini").write_text(TINY_INI)
    assert load_config(tmp_path / "c.ini").model.model_dim == 8
    with pytest.raises(ConfigError):
        load_config("nonexistent-preset")


def test_paramcount_output(capsys):
    code, out, _ = run(capsys, "paramcount")
    assert code == 0
    assert out.splitlines() == ["parameters 1199232", "reference  1192616", "deviation  +0.555%"]


def test_gradcheck_exit_codes(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0 and "ok at 0.0001" in out
    code, out, _ = run(capsys, "gradcheck", "--tolerance", "1e-12")
    assert code == 1 and "FAIL" in out


def test_usage_errors_exit_2(capsys):
    assert run(capsys, "no-such-command")[0] == 2
    assert run(capsys, "train")[0] == 2  # --store is required
    assert run(capsys, "paramcount", "--seed", "x")[0] == 2


def test_runtime_error_exit_1(capsys, tmp_path):
    code, _, err = run(capsys, "embed", "--checkpoint", tmp_path / "missing.sbnc", "--store", tmp_path / "x", "--out", tmp_path / "e.csv")
    assert code == 1 and err.startswith("sbncl embed: ")


def test_end_to_end(capsys, tmp_path, monkeypatch):
    (tmp_path / "tiny.ini").write_text(TINY_INI)
    monkeypatch.setenv("SBNCL_DATA_DIR", str(tmp_path))
    assert run(capsys, "synth", "--out", tmp_path / "cohort.sbst", "--subjects", 4, "--strips-per-subject", 12)[0] == 0
    code, out, _ = run(capsys, "preprocess", tmp_path / "cohort.sbst", "--out", tmp_path / "norm.sbst", "--dataset-id", "synth", "--min-quality", "unacceptable")
    assert code == 0 and (tmp_path / "norm.sbst").exists()

    # relative store path resolves under $SBNCL_DATA_DIR
    code, out, _ = run(capsys, "train", "--store", "norm.sbst", "--out-dir", tmp_path / "run", "--config", tmp_path / "tiny.ini")
    assert code == 0, out
    assert "trained 6 iterations" in out and out.count("gender accuracy") == 2
    assert load_config(tmp_path / "run" / "config.ini").model.model_dim == 8

    code, out, _ = run(capsys, "embed", "--checkpoint", tmp_path / "run" / "final.sbnc", "--store", "norm.sbst", "--out", tmp_path / "emb.csv")
    assert code == 0
    table = read_embeddings(tmp_path / "emb.csv")
    assert table.values.shape == (48, 8)

    code, out, _ = run(capsys, "probe-gender", "--embeddings", tmp_path / "emb.csv", "--folds", 4, "--out", tmp_path / "g.csv")
    assert code == 0 and "accuracy" in out and (tmp_path / "g.csv").exists()
    code, out, _ = run(capsys, "probe-age", "--embeddings", tmp_path / "emb.csv", "--folds", 4)
    assert code == 0 and "r2" in out
    code, out, _ = run(capsys, "pca", "--embeddings", tmp_path / "emb.csv", "--out", tmp_path / "pc.csv", "--subjects", 0)
    assert code == 0 and (tmp_path / "pc.csv").read_text().splitlines()[0].startswith("pc1,pc2,pc3")


def test_rhythm_and_sleep_probes(capsys, tmp_path):
    (tmp_path / "tiny.ini").write_text(TINY_INI)
    for prefix in ("a", "b"):
        assert run(capsys, "synth", "--kind", "rhythm", "--subjects", 2, "--duration", 60, "--prefix", prefix, "--out", tmp_path / f"{prefix}.sbst")[0] == 0
    assert run(capsys, "synth", "--kind", "sleep", "--subjects", 3, "--epochs", 12, "--out", tmp_path / "sleep.sbst")[0] == 0
    assert run(capsys, "train", "--store", tmp_path / "a.sbst", "--out-dir", tmp_path / "run", "--config", tmp_path / "tiny.ini", "--no-eval")[0] == 0
    ckpt = tmp_path / "run" / "final.sbnc"
    for name in ("a", "b", "sleep"):
        assert run(capsys, "embed", "--checkpoint", ckpt, "--store", tmp_path / f"{name}.sbst", "--out", tmp_path / f"{name}.csv")[0] == 0
    code, out, _ = run(capsys, "probe-afib", "--train", tmp_path / "a.csv", "--test", tmp_path / "b.csv")
    assert code == 0 and "sensitivity" in out
    assert run(capsys, "probe-afib", "--train", tmp_path / "a.csv", "--test", tmp_path / "a.csv")[0] == 1
    code, out, _ = run(capsys, "probe-sleep", "--embeddings", tmp_path / "sleep.csv")
    assert code == 0 and "accuracy" in out
