import dataclasses
import json

import numpy as np
import pytest

from tonectc.cli import main
from tonectc.corpus import ManifestRecord, write_manifest
from tonectc.features import write_tpf
from tonectc.synth import DEFAULT_SPEC, synth_corpus

SMALL = dataclasses.replace(DEFAULT_SPEC, sizes=(4, 2, 2), heldout_sizes=(4, 2, 2), max_frames=10,
                            max_syllables=3)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    synth_corpus(SMALL, 2, root)
    return root


def kv(path, **values):
    path.write_text("".join(f"{k}={v}\n" for k, v in values.items()))
    return str(path)


def test_seed_is_mandatory(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "c")]) == 2
    assert "tonectc synth: error: --seed is required" in capsys.readouterr().err
    assert main(["train", "--manifest", "m.jsonl", "--out", "x.ckpt"]) == 2


def test_synth_from_config(tmp_path, capsys):
    cfg = kv(tmp_path / "s.cfg", seed=4, out=tmp_path / "c", sizes="2,1,1", heldout_sizes="2,1,1", f0="true")
    assert main(["synth", "--config", cfg]) == 0
    spec = json.loads((tmp_path / "c" / "corpus_spec.json").read_text())
    assert spec["with_f0"] is True and spec["sizes"] == [2, 1, 1]
    assert "wrote 16 utterances" in capsys.readouterr().out


def test_bad_config_is_config_error(tmp_path, capsys):
    assert main(["synth", "--config", kv(tmp_path / "s.cfg", colour="red")]) == 2
    assert "unknown option" in capsys.readouterr().err
    assert main(["synth", "--config", kv(tmp_path / "f.cfg", seed=1, out=tmp_path, f0="maybe")]) == 2


def test_bad_spec_is_config_error(tmp_path, capsys):
    (tmp_path / "spec.json").write_text(json.dumps({"languages": []}))
    assert main(["synth", "--seed", "1", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path)]) == 2
    assert "tonectc synth: error:" in capsys.readouterr().err


def test_missing_manifest_is_data_error(tmp_path, capsys):
    code = main(["train", "--seed", "0", "--manifest", str(tmp_path / "none.jsonl"), "--out", "x.ckpt"])
    assert code == 3
    assert capsys.readouterr().err.startswith("tonectc prepare: error:")


def test_unalignable_corpus_is_training_error(tmp_path, capsys):
    recs = []
    for i in range(2):
        write_tpf(tmp_path / f"u{i}.tpf", np.zeros((4, 40), dtype=np.float32))
        recs.append(ManifestRecord(f"u{i}", "cmn", "s", {"features": f"u{i}.tpf"}, "ma˥.ta˧.pa˩"))
    write_manifest(tmp_path / "m.jsonl", recs)
    code = main(["train", "--seed", "0", "--manifest", str(tmp_path / "m.jsonl"), "--hidden-dim", "4",
                 "--fc-dim", "4", "--max-epochs", "1", "--out", str(tmp_path / "m.ckpt")])
    assert code == 4
    assert capsys.readouterr().err.startswith("tonectc train: error:")


def test_pipeline_commands(corpus, tmp_path, capsys):
    m, s = str(corpus / "manifest.jsonl"), str(corpus / "splits.json")
    tcfg = kv(tmp_path / "t.cfg", hidden_dim=8, fc_dim=8, max_epochs=2, variant=2)
    ckpt = str(tmp_path / "m.ckpt")
    assert main(["train", "--manifest", m, "--splits", s, "--train-config", tcfg, "--seed", "0",
                 "--out", ckpt]) == 0
    assert main(["adapt", "--checkpoint", ckpt, "--manifest", m, "--splits", s, "--language", "synd",
                 "--stage-a-epochs", "1", "--stage-b-epochs", "1", "--out", str(tmp_path / "a.ckpt")]) == 0
    assert (tmp_path / "a.audit.tsv").read_text().startswith("# phone\n")
    hyp = str(tmp_path / "hyp")
    assert main(["decode", "--checkpoint", str(tmp_path / "a.ckpt"), "--manifest", m, "--splits", s,
                 "--split", "adapt_test", "--beam-width", "3", "--out", hyp]) == 0
    score = str(tmp_path / "score")
    assert main(["score", "--manifest", m, "--splits", s, "--split", "adapt_test", "--variant", "2",
                 "--hyp-dir", hyp, "--out", score]) == 0
    assert "PER" in capsys.readouterr().out
    assert main(["report", "--csv", f"{score}/report.csv", "--out", str(tmp_path / "rep")]) == 0
    for name in ("report.csv", "report.txt", "report_error_rates.png"):
        assert (tmp_path / "rep" / name).exists()


def test_prepare_and_featurize(corpus, tmp_path):
    assert main(["prepare", "--manifest", str(corpus / "manifest.jsonl"), "--variant", "4",
                 "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "alphabet_voice_universal.txt").read_text().split() == \
        ["<blank>", "ʔ", "h", "<boundary>", "<modal>"]
    assert main(["featurize", "--manifest", str(corpus / "manifest.jsonl"), "--out", str(tmp_path / "f")]) == 0
    assert (tmp_path / "f" / "manifest.jsonl").read_text() == (corpus / "manifest.jsonl").read_text()


def test_decode_unknown_language_is_data_error(corpus, tmp_path, capsys):
    m = str(corpus / "manifest.jsonl")
    ckpt = str(tmp_path / "m.ckpt")
    assert main(["train", "--manifest", m, "--splits", str(corpus / "splits.json"), "--seed", "0",
                 "--hidden-dim", "4", "--fc-dim", "4", "--max-epochs", "1", "--out", ckpt]) == 0
    capsys.readouterr()
    assert main(["decode", "--checkpoint", ckpt, "--manifest", m, "--language", "synd",
                 "--out", str(tmp_path / "h")]) == 3
    assert capsys.readouterr().err.startswith("tonectc decode: error:")


def test_run_plan(corpus, tmp_path, capsys):
    plan = kv(tmp_path / "plan.cfg", setting="monolingual", manifest=corpus / "manifest.jsonl",
              mono_hidden_dim=4, mono_fc_dim=4, max_epochs=2, greedy="true")
    assert main(["run", "--plan", plan, "--seed", "3", "--out", str(tmp_path / "out")]) == 0
    assert "JER" in capsys.readouterr().out
    assert (tmp_path / "out" / "report_training_curves.png").exists()


def test_report_rejects_garbage(tmp_path, capsys):
    (tmp_path / "x.csv").write_text("hello\n1\n")
    assert main(["report", "--csv", str(tmp_path / "x.csv"), "--out", str(tmp_path)]) == 3
    assert capsys.readouterr().err.startswith("tonectc report: error:")


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as e:
        main(["train"])
    assert e.value.code == 2
