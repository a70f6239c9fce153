import dataclasses

import pytest

from tonectc.errors import ConfigError, DataError, DimMismatch
from tonectc.experiment import ExperimentPlan, check_disjoint, run
from tonectc.metrics import rows_from_csv
from tonectc.synth import DEFAULT_SPEC, synth_corpus

SMALL = dataclasses.replace(DEFAULT_SPEC, sizes=(4, 2, 2), heldout_sizes=(4, 2, 2), max_frames=10,
                            max_syllables=3)
FAST = dict(hidden_dim=8, fc_dim=8, max_epochs=2, stage_a_epochs=1, stage_b_epochs=1,
            mono_hidden_dim=4, mono_fc_dim=4, beam_width=4)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    synth_corpus(SMALL, 5, root)
    return root


@pytest.fixture(scope="module")
def corpus_f0(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus_f0")
    synth_corpus(dataclasses.replace(SMALL, with_f0=True), 5, root)
    return root


def plan(corpus, **kw):
    return ExperimentPlan(manifest=str(corpus / "manifest.jsonl"), **{**FAST, **kw})


def metrics(result):
    return {r.metric for r in result.rows}


def test_multilingual_model2(corpus, tmp_path):
    res = run(plan(corpus, variant=2), tmp_path)
    assert metrics(res) == {"PER", "TER", "CoER", "VoER"}
    assert {r.language for r in res.rows} == {"syna", "synb", "sync", "all"}
    for name in ("report.csv", "report.txt", "report_error_rates.png", "report_training_curves.png",
                 "hyp_phone.txt", "hyp_tone.txt", "model.ckpt", "plan.cfg"):
        assert (tmp_path / name).exists(), name
    assert rows_from_csv((tmp_path / "report.csv").read_text()) == res.rows
    assert ExperimentPlan.read(tmp_path / "plan.cfg") == plan(corpus, variant=2)


def test_model4_reports_voice(corpus, tmp_path):
    res = run(plan(corpus, variant=4, max_epochs=1), tmp_path)
    assert "VER" in metrics(res) and "JER" in metrics(res)


def test_cross_lingual_writes_audit(corpus, tmp_path):
    res = run(plan(corpus, setting="cross-lingual"), tmp_path)
    audit = (tmp_path / "mapping_audit.tsv").read_text()
    assert audit.startswith("# joint\n")
    assert {r.language for r in res.rows} == {"synd", "all"}
    assert res.checkpoint.meta["adapted_language"] == "synd"


def test_cross_lingual_from_pretrained(corpus, tmp_path):
    run(plan(corpus), tmp_path / "multi")
    res = run(plan(corpus, setting="cross-lingual", pretrained=str(tmp_path / "multi" / "model.ckpt")),
              tmp_path / "cross")
    assert "pretrain" not in res.checkpoint.meta.get("history", {})
    with pytest.raises(ConfigError):
        run(plan(corpus, setting="cross-lingual", adapt_language="syna",
                 pretrained=str(tmp_path / "multi" / "model.ckpt")), tmp_path / "bad")


def test_monolingual_uses_small_dims(corpus, tmp_path):
    res = run(plan(corpus, setting="monolingual"), tmp_path)
    assert res.checkpoint.config.hidden_dim == 4
    assert res.checkpoint.model.languages == ["synd"]


def test_model1_with_f0(corpus_f0, tmp_path):
    res = run(plan(corpus_f0, with_f0=True), tmp_path)
    assert res.checkpoint.config.input_dim == 41
    assert {"CoER", "VoER", "PER-joint", "TER-joint"} <= metrics(res)
    assert {r.model for r in res.rows} == {"model1+F0"}


def test_f0_flag_must_match_features(corpus, corpus_f0, tmp_path):
    with pytest.raises(DimMismatch) as e:
        run(plan(corpus, with_f0=True), tmp_path)
    assert e.value.stage == "train"
    with pytest.raises(DimMismatch):
        run(plan(corpus_f0), tmp_path)


def test_same_seed_same_report(corpus, tmp_path):
    for name in ("a", "b"):
        run(plan(corpus), tmp_path / name)
    for f in ("report.csv", "report.txt", "report_error_rates.png", "report_training_curves.png"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_missing_manifest_names_stage(tmp_path):
    with pytest.raises(DataError) as e:
        run(ExperimentPlan(manifest=str(tmp_path / "nope.jsonl")), tmp_path)
    assert e.value.stage == "prepare"


def test_check_disjoint():
    check_disjoint({"train": ["a", "b"], "dev": ["c"]})
    with pytest.raises(DataError):
        check_disjoint({"train": ["a", "b"], "test": ["b"]})


def test_plan_validation(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentPlan(setting="bilingual")
    with pytest.raises(ConfigError):
        ExperimentPlan.from_dict({"colour": "red"})
    with pytest.raises(ConfigError):
        ExperimentPlan.from_dict({"greedy": "maybe"})
    p = ExperimentPlan.from_dict({"variant": "3", "greedy": "yes", "lr": "0.5"})
    assert (p.variant, p.greedy, p.lr, p.label) == (3, True, 0.5, "model3")
    p.write(tmp_path / "p.cfg")
    assert ExperimentPlan.read(tmp_path / "p.cfg") == p
