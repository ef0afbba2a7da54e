import json
import xml.etree.ElementTree as ET
from dataclasses import replace

import pytest

from avcil import baselines as B
from avcil.harness import (
    ExperimentConfig,
    ExperimentError,
    RunRecord,
    load_records,
    record_path,
    report,
    results_csv,
    run_experiment,
    summarize,
)
from avcil.metrics import AccuracyMatrix, avg_accuracy, forgetting


def hand_record(method, seed, rows):
    A = AccuracyMatrix(rows)
    n = len(rows)
    return RunRecord(method, seed, A, avg_acc=[avg_accuracy(A, k) for k in range(1, n + 1)],
                     forgetting=[None] + [forgetting(A, k) for k in range(2, n + 1)], storage_footprint=64)


def test_unknown_method_rejected_before_any_work(tmp_path):
    cfg = ExperimentConfig(methods=("hail", "bogus"), output_dir=str(tmp_path / "out"))
    with pytest.raises(ExperimentError, match="bogus"):
        run_experiment(cfg)
    assert not (tmp_path / "out").exists()


@pytest.mark.parametrize("data", [{"nope": 1}, {"synth": {"dd": 3}}, {"hail": {"eta2": 1}}])
def test_config_rejects_unknown_keys(data):
    with pytest.raises(ExperimentError):
        ExperimentConfig.from_dict(data)


def test_config_round_trip_and_defaults(small_experiment, tmp_path):
    assert ExperimentConfig.from_dict(small_experiment.to_dict()) == small_experiment
    assert ExperimentConfig.from_dict({}) == ExperimentConfig()
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"methods": ["hail"], "hail": {"m": 3}}))
    cfg = ExperimentConfig.load(p)
    assert cfg.methods == ("hail",) and cfg.hail.m == 3 and cfg.hail.alpha == 0.7


def test_noiseless_single_species_scores_perfectly(small_synth):
    synth = replace(small_synth, n_species=1, audio_noise=0.0, visual_noise=0.0)
    cfg = ExperimentConfig(methods=("hail", "finetune", "joint_upper"), synth=synth, seeds=(0,))
    for rec in run_experiment(cfg, write=False):
        assert rec.accuracy_matrix.a(1, 1) == 1.0, rec.method


def test_run_writes_everything_and_is_byte_deterministic(small_experiment, tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = replace(small_experiment, output_dir=str(tmp_path / name))
        recs = run_experiment(cfg)
        outs.append(tmp_path / name)
    a, b = outs
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    assert (a / "checkpoints" / "hail__seed0.ckpt").read_bytes() == (b / "checkpoints" / "hail__seed0.ckpt").read_bytes()
    loaded = load_records(a)
    assert {r.method for r in loaded} == {"hail", "finetune"}
    assert all(r.complete and r.n_stages == 3 for r in loaded)
    assert results_csv(loaded) == (a / "results.csv").read_text()
    assert ExperimentConfig.load(a / "config.json") == replace(small_experiment, output_dir=str(a))
    header = (a / "results.csv").read_text().splitlines()[0]
    assert header == "method,seed,stage,task,accuracy"
    assert len((a / "results.csv").read_text().splitlines()) == 1 + 2 * 6
    assert recs[0].checkpoint_bytes == (b / "checkpoints" / f"{recs[0].method}__seed0.ckpt").stat().st_size


def test_partial_results_survive_a_crash(small_experiment, tmp_path, monkeypatch):
    original = B.SoftmaxHeadLearner.learn_species

    def failing(self, *a, **kw):
        if self.n_learned == 1:
            raise OSError("disk on fire")
        return original(self, *a, **kw)

    monkeypatch.setattr(B.SoftmaxHeadLearner, "learn_species", failing)
    cfg = replace(small_experiment, methods=("finetune",), output_dir=str(tmp_path))
    with pytest.raises(OSError):
        run_experiment(cfg)
    rec = RunRecord.from_dict(json.loads(record_path(tmp_path, "finetune", 0).read_text()))
    assert rec.n_stages == 1 and not rec.complete


def test_exemplar_free_footprint_ignores_sample_count(small_experiment):
    sizes = []
    for n in (20, 40):
        synth = replace(small_experiment.synth, samples_per_class_train=n)
        cfg = replace(small_experiment, methods=("hail", "finetune", "icarl_nme"), synth=synth)
        sizes.append({r.method: r.storage_footprint for r in run_experiment(cfg, write=False)})
    assert sizes[0]["hail"] == sizes[1]["hail"]
    assert sizes[0]["finetune"] == sizes[1]["finetune"]
    # exemplar sets are capped per class, so iCaRL grows with classes, not samples
    assert sizes[0]["icarl_nme"] == sizes[1]["icarl_nme"]
    two = replace(small_experiment, methods=("icarl_nme",), synth=replace(small_experiment.synth, n_species=2))
    fp2 = run_experiment(two, write=False)[0].storage_footprint
    exemplar_bytes = lambda k: k * 4 * 20 * 120 * 8
    assert sizes[0]["icarl_nme"] - fp2 == exemplar_bytes(3) - exemplar_bytes(2)


def test_summary_single_record_has_zero_sd():
    s = summarize([hand_record("x", 0, [[0.9], [0.7, 0.8]])])
    assert s["x"]["avg_acc"]["sd"] == 0 and s["x"]["forgetting"]["sd"] == 0


def test_summary_matches_hand_oracle():
    recs = [hand_record("m", s, [[0.9], [0.7, 0.8]]) for s in (0, 1)]
    s = summarize(recs)["m"]
    assert s["avg_acc"]["mean"] == 0.75 and s["forgetting"]["mean"] == 0.2
    assert s["avg_acc_curve"] == [0.9, 0.75]
    assert s["storage_footprint"]["mean"] == 64


def test_report_outputs_and_svg_structure(tmp_path):
    recs = [hand_record("a", 0, [[0.9], [0.7, 0.8]]), hand_record("b", 0, [[0.5], [0.4, 0.6]]),
            hand_record("a", 1, [[1.0], [0.8, 0.6]])]
    paths = report(recs, tmp_path)
    root = ET.parse(paths["svg"]).getroot()
    ns = "{http://www.w3.org/2000/svg}"
    assert len(root.findall(f"{ns}polyline")) == 2
    labels = [t.text for t in root.iter(f"{ns}text")]
    assert "Stage (species learned)" in labels and "Average accuracy A_k" in labels
    summary = json.loads(paths["summary"].read_text())
    assert set(summary) == {"a", "b"} and summary["a"]["avg_acc"]["n"] == 2
    rows = paths["csv"].read_text().splitlines()
    assert rows[1] == "a,0,1,1,0.9" and rows[-1] == "b,0,2,2,0.6"
    with pytest.raises(ExperimentError):
        report([], tmp_path)
