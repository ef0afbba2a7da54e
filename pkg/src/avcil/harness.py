"""Stage-by-stage experiment runner, result persistence and reporting.

For every seed the synthetic stream is generated, one feature extractor per
required modality is trained on the first species and frozen, and every
method then learns the species in order.  After stage ``k`` each method is
evaluated on the test splits of species ``1..k``, filling row ``k`` of its
accuracy matrix.  A record file is rewritten atomically after every stage.

Output layout under ``output_dir``::

    config.json
    records/<method>__seed<seed>.json
    checkpoints/<method>__seed<seed>.ckpt
    results.csv          method,seed,stage,task,accuracy
    summary.json         per-method mean and sd of final avg_acc / forgetting
    accuracy_curve.svg   mean A_k per stage, one polyline per method
"""

from __future__ import annotations

import csv
import io
import json
import statistics
import time
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import baselines as B
from .metrics import AccuracyMatrix, avg_accuracy, forgetting
from .pipeline import FeatureExtractor, HailConfig, HailLearner, IncrementalLearner
from .storage import atomic_write_text, encode_split, save_checkpoint
from .synth import SynthConfig, generate


class ExperimentError(ValueError):
    pass


HAIL_VARIANTS: dict[str, dict] = {
    "hail": {},
    "hail_noproto": {"use_prototypes": False},
    "hail_audio": {"modality": "audio"},
    "hail_visual": {"modality": "visual"},
    "hail_oracle": {"routing": "oracle"},
}
BASELINE_METHODS = ("finetune", "lwf", "ewc", "icarl_nme", "joint_upper")
METHODS = tuple(HAIL_VARIANTS) + BASELINE_METHODS


@dataclass(frozen=True)
class BaselineConfig:
    steps: int = 300
    lr: float = 0.5
    lwf_lambda: float = 0.5
    temperature: float = 2.0
    lambda_ewc: float = 100.0
    icarl_budget: int = 20


def _from_dict(cls, data: dict | None, where: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ExperimentError(f"unknown {where} keys: {', '.join(unknown)}")
    return data


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on.  Missing keys take the defaults below.

    ``seeds`` drive both data generation and model initialisation: run seed
    ``s`` generates ``synth`` with ``seed=s``.
    """

    methods: tuple[str, ...] = ("finetune", "lwf", "ewc", "icarl_nme", "hail", "joint_upper")
    synth: SynthConfig = SynthConfig()
    hail: HailConfig = HailConfig()
    baseline: BaselineConfig = BaselineConfig()
    seeds: tuple[int, ...] = (0, 1, 2)
    output_dir: str = "runs/default"
    save_checkpoints: bool = True

    def validate(self):
        if not self.methods:
            raise ExperimentError("no methods selected")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ExperimentError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ExperimentError("duplicate method names")
        if not self.seeds:
            raise ExperimentError("no seeds given")
        self.synth.validate()

    def to_dict(self) -> dict:
        return {
            "methods": list(self.methods),
            "synth": self.synth.to_dict(),
            "hail": asdict(self.hail),
            "baseline": asdict(self.baseline),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "save_checkpoints": self.save_checkpoints,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = _from_dict(cls, data, "config")
        synth = _from_dict(SynthConfig, data.pop("synth", None), "synth")
        hail = _from_dict(HailConfig, data.pop("hail", None), "hail")
        base = _from_dict(BaselineConfig, data.pop("baseline", None), "baseline")
        for k in ("methods", "seeds"):
            if k in data:
                data[k] = tuple(data[k])
        return cls(synth=SynthConfig.from_dict(synth), hail=HailConfig(**hail), baseline=BaselineConfig(**base),
                   **data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RunRecord:
    method: str
    seed: int
    accuracy_matrix: AccuracyMatrix
    avg_acc: list[float] = field(default_factory=list)
    forgetting: list[float | None] = field(default_factory=list)
    wall_times: dict[str, list[float]] = field(default_factory=lambda: {"learn": [], "eval": []})
    storage_footprint: int = 0
    checkpoint_bytes: int | None = None
    train_set_bytes: int = 0
    complete: bool = False

    @property
    def n_stages(self) -> int:
        return self.accuracy_matrix.n_tasks

    @property
    def final_avg_acc(self) -> float:
        return self.avg_acc[-1]

    @property
    def final_forgetting(self) -> float | None:
        return self.forgetting[-1] if self.forgetting else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["accuracy_matrix"] = self.accuracy_matrix.to_list()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["accuracy_matrix"] = AccuracyMatrix(d["accuracy_matrix"])
        return cls(**d)


def record_path(out_dir, method: str, seed: int) -> Path:
    return Path(out_dir) / "records" / f"{method}__seed{seed}.json"


def _make_learner(method: str, cfg: ExperimentConfig, extractor, dim: int, n_stages: int, seed: int):
    if method in HAIL_VARIANTS:
        return HailLearner(extractor, replace(cfg.hail, **HAIL_VARIANTS[method]), n_stages, seed)
    b = cfg.baseline
    kw = {"steps": b.steps, "lr": b.lr}
    if method == "finetune":
        return B.SoftmaxHeadLearner(dim, **kw)
    if method == "lwf":
        return B.LwFLearner(dim, lam=b.lwf_lambda, temperature=b.temperature, **kw)
    if method == "ewc":
        return B.EWCLearner(dim, lambda_ewc=b.lambda_ewc, **kw)
    if method == "icarl_nme":
        return B.ICaRLLearner(dim, budget_per_class=b.icarl_budget, **kw)
    if method == "joint_upper":
        return B.JointLearner(cfg.hail.eta)
    raise ExperimentError(f"unknown method {method!r}")


def _modality(method: str, cfg: ExperimentConfig) -> str:
    if method in HAIL_VARIANTS:
        return HAIL_VARIANTS[method].get("modality", cfg.hail.modality)
    return "av"


def accuracy(probs: np.ndarray, labels) -> float:
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(labels)))


def run_method(learner: IncrementalLearner, stages, feats, record: RunRecord, on_stage=None) -> RunRecord:
    """Learn the species in order, evaluating on every seen species after each."""
    for k, st in enumerate(stages):
        t0 = time.perf_counter()
        learner.learn_species(feats[k]["train"], st.train.labels, st.species_id,
                              val=(feats[k]["val"], st.val.labels))
        t1 = time.perf_counter()
        for j in range(k + 1):
            probs = learner.predict(feats[j]["test"], species=stages[j].species_id)
            record.accuracy_matrix.set(k + 1, j + 1, accuracy(probs, stages[j].test.labels))
        record.wall_times["learn"].append(t1 - t0)
        record.wall_times["eval"].append(time.perf_counter() - t1)
        record.avg_acc.append(avg_accuracy(record.accuracy_matrix, k + 1))
        record.forgetting.append(forgetting(record.accuracy_matrix, k + 1) if k else None)
        record.storage_footprint = learner.storage_footprint()
        if on_stage is not None:
            on_stage(record)
    return record


def _persist(out_dir, record: RunRecord):
    atomic_write_text(record_path(out_dir, record.method, record.seed),
                      json.dumps(record.to_dict(), indent=1, sort_keys=True))


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> list[RunRecord]:
    """Run every (method, seed) pair; with ``write`` the records and reports land in ``cfg.output_dir``."""
    cfg.validate()
    out = Path(cfg.output_dir)
    if write:
        atomic_write_text(out / "config.json", json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    records = []
    for seed in cfg.seeds:
        synth = replace(cfg.synth, seed=seed)
        stages = generate(synth)
        train_bytes = len(encode_split(stages, "train", synth))
        cache: dict[str, tuple] = {}
        for method in cfg.methods:
            modality = _modality(method, cfg)
            if modality not in cache:
                ext = FeatureExtractor(synth.d, replace(cfg.hail, modality=modality), seed).fit(stages[0].train)
                feats = [{w: ext.transform(st.split(w)) for w in ("train", "val", "test")} for st in stages]
                cache[modality] = (ext, feats)
            ext, feats = cache[modality]
            dim = feats[0]["train"].av.shape[1]
            learner = _make_learner(method, cfg, ext, dim, len(stages), seed)
            rec = RunRecord(method, seed, AccuracyMatrix(), train_set_bytes=train_bytes)
            run_method(learner, stages, feats, rec, on_stage=(lambda r: _persist(out, r)) if write else None)
            rec.complete = True
            if write and cfg.save_checkpoints:
                rec.checkpoint_bytes = save_checkpoint(learner, out / "checkpoints" / f"{method}__seed{seed}.ckpt")
            if write:
                _persist(out, rec)
            records.append(rec)
    if write:
        report(records, out)
    return records


def load_records(out_dir) -> list[RunRecord]:
    paths = sorted((Path(out_dir) / "records").glob("*.json"))
    return [RunRecord.from_dict(json.loads(p.read_text())) for p in paths]


# ------------------------------------------------------------------ report


def _method_order(records: Sequence[RunRecord]) -> list[str]:
    seen: list[str] = []
    for r in records:
        if r.method not in seen:
            seen.append(r.method)
    return seen


def _stat(values: list[float]) -> dict:
    return {"mean": statistics.fmean(values), "sd": statistics.pstdev(values), "n": len(values), "values": values}


def results_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "seed", "stage", "task", "accuracy"])
    for r in sorted(records, key=lambda r: (r.method, r.seed)):
        for k, row in enumerate(r.accuracy_matrix.to_list(), start=1):
            for j, v in enumerate(row, start=1):
                w.writerow([r.method, r.seed, k, j, repr(float(v))])
    return buf.getvalue()


def summarize(records: Sequence[RunRecord]) -> dict:
    """Per method: mean and (population) sd across seeds of the final-stage metrics."""
    if not records:
        raise ExperimentError("no records to summarize")
    out = {}
    for m in _method_order(records):
        rs = sorted((r for r in records if r.method == m), key=lambda r: r.seed)
        n_stage = min(len(r.avg_acc) for r in rs)
        entry = {
            "seeds": [r.seed for r in rs],
            "n_stages": n_stage,
            "avg_acc": _stat([r.avg_acc[n_stage - 1] for r in rs]),
            "avg_acc_curve": [statistics.fmean(r.avg_acc[k] for r in rs) for k in range(n_stage)],
            "storage_footprint": _stat([float(r.storage_footprint) for r in rs]),
        }
        if n_stage >= 2:
            entry["forgetting"] = _stat([r.forgetting[n_stage - 1] for r in rs])
        sizes = [r.checkpoint_bytes for r in rs if r.checkpoint_bytes is not None]
        if sizes:
            entry["checkpoint_bytes"] = _stat([float(s) for s in sizes])
            entry["checkpoint_fraction_of_train"] = _stat(
                [r.checkpoint_bytes / r.train_set_bytes for r in rs if r.checkpoint_bytes is not None])
        out[m] = entry
    return out


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
            "#bcbd22", "#17becf")


def accuracy_svg(summary: dict, width: int = 640, height: int = 400) -> str:
    left, right, top, bottom = 60, 150, 20, 50
    pw, ph = width - left - right, height - top - bottom
    n = max(e["n_stages"] for e in summary.values())

    def xy(k, a):
        x = left + (pw * (k - 1) / (n - 1) if n > 1 else pw / 2)
        return x, top + ph * (1.0 - a)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height),
                     viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    axes = ET.SubElement(svg, "g", stroke="black", fill="none")
    ET.SubElement(axes, "line", x1=str(left), y1=str(top + ph), x2=str(left + pw), y2=str(top + ph))
    ET.SubElement(axes, "line", x1=str(left), y1=str(top), x2=str(left), y2=str(top + ph))
    text = ET.SubElement(svg, "g", {"font-family": "sans-serif", "font-size": "11"})
    for k in range(1, n + 1):
        x, y = xy(k, 0.0)
        ET.SubElement(text, "text", x=f"{x:.1f}", y=f"{y + 15:.1f}", **{"text-anchor": "middle"}).text = str(k)
    for a in (0.0, 0.25, 0.5, 0.75, 1.0):
        x, y = xy(1, a)
        ET.SubElement(text, "text", x=f"{left - 6}", y=f"{y + 4:.1f}", **{"text-anchor": "end"}).text = f"{a:.2f}"
    ET.SubElement(text, "text", x=f"{left + pw / 2:.1f}", y=str(height - 10),
                  **{"text-anchor": "middle"}).text = "Stage (species learned)"
    ET.SubElement(text, "text", x="14", y=f"{top + ph / 2:.1f}", transform=f"rotate(-90 14 {top + ph / 2:.1f})",
                  **{"text-anchor": "middle"}).text = "Average accuracy A_k"
    for idx, (m, e) in enumerate(summary.items()):
        color = _PALETTE[idx % len(_PALETTE)]
        pts = " ".join("{:.1f},{:.1f}".format(*xy(k, a)) for k, a in enumerate(e["avg_acc_curve"], start=1))
        line = ET.SubElement(svg, "polyline", points=pts, fill="none", stroke=color, **{"stroke-width": "2"})
        ET.SubElement(line, "title").text = m
        ly = top + 14 * idx + 10
        ET.SubElement(svg, "line", x1=str(left + pw + 10), y1=str(ly), x2=str(left + pw + 30), y2=str(ly),
                      stroke=color, **{"stroke-width": "2"})
        ET.SubElement(text, "text", x=str(left + pw + 35), y=str(ly + 4)).text = m
    return ET.tostring(svg, encoding="unicode", xml_declaration=False) + "\n"


def report(records: Sequence[RunRecord], out_dir) -> dict[str, Path]:
    """Write ``results.csv``, ``summary.json`` and ``accuracy_curve.svg``."""
    if not records:
        raise ExperimentError("report needs at least one record")
    out = Path(out_dir)
    summary = summarize(records)
    paths = {"csv": out / "results.csv", "summary": out / "summary.json", "svg": out / "accuracy_curve.svg"}
    atomic_write_text(paths["csv"], results_csv(records))
    atomic_write_text(paths["summary"], json.dumps(summary, indent=1, sort_keys=True))
    atomic_write_text(paths["svg"], accuracy_svg(summary))
    return paths
