"""Token-level binary HIPAA F1 and per-category scores."""
from __future__ import annotations

import configparser
from collections.abc import Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .corpus import PhiCategory, Sentence, label_category


class MetricError(ValueError):
    pass


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return _f1(self.precision, self.recall)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    per_category: dict[str, Counts] = field(default_factory=dict)
    hipaa_map: dict[str, bool] = field(default_factory=dict)

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return _f1(self.precision, self.recall)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1,
                "per_category": {k: v.as_dict() for k, v in self.per_category.items()}}


@dataclass
class CategoryReport:
    per_category: dict[str, Counts]

    @property
    def micro(self) -> Counts:
        tot = Counts()
        for c in self.per_category.values():
            tot.tp += c.tp
            tot.fp += c.fp
            tot.fn += c.fn
        return tot

    @property
    def macro_f1(self) -> float:
        present = [c.f1 for c in self.per_category.values() if c.tp + c.fp + c.fn]
        return sum(present) / len(present) if present else 0.0


def default_hipaa_map() -> dict[str, bool]:
    text = resources.files("deidrep.data").joinpath("hipaa_map.cfg").read_text(encoding="utf-8")
    return parse_hipaa_map(text)


def parse_hipaa_map(text: str) -> dict[str, bool]:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if not cp.has_section("hipaa"):
        raise MetricError("hipaa map needs a [hipaa] section")
    known = {c.value for c in PhiCategory}
    out = {}
    for key in cp["hipaa"]:
        name = key.upper()
        if name not in known:
            raise MetricError(f"unknown PHI category {key!r} in hipaa map")
        out[name] = cp["hipaa"].getboolean(key)
    return out


def load_hipaa_map(path: str | Path | None = None) -> dict[str, bool]:
    if path is None:
        return default_hipaa_map()
    return parse_hipaa_map(Path(path).read_text(encoding="utf-8"))


LabelSeqs = Sequence[Sequence[str]] | Sequence[Sentence]


def _streams(gold: LabelSeqs, pred: LabelSeqs) -> list[tuple[str, str]]:
    def labels_of(x):
        return list(x.labels) if isinstance(x, Sentence) else list(x)

    if len(gold) != len(pred):
        raise MetricError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    out = []
    for i, (g, p) in enumerate(zip(gold, pred)):
        gl, pl = labels_of(g), labels_of(p)
        if len(gl) != len(pl):
            raise MetricError(f"token streams diverge at sentence {i}, token {min(len(gl), len(pl))}"
                              f" (position {len(out) + min(len(gl), len(pl))})")
        out.extend(zip(gl, pl))
    return out


def _positive(label: str, hipaa_map: dict[str, bool]) -> bool:
    cat = label_category(label)
    return cat is not None and hipaa_map.get(cat.value, True)


def binary_hipaa_f1(gold: LabelSeqs, pred: LabelSeqs,
                    hipaa_map: dict[str, bool] | None = None) -> EvalReport:
    """A token is positive when its category counts under ``hipaa_map``.

    Category disagreements between two positive tokens still count as hits.
    """
    hmap = default_hipaa_map() if hipaa_map is None else hipaa_map
    tp = fp = fn = 0
    for g, p in _streams(gold, pred):
        gp, pp = _positive(g, hmap), _positive(p, hmap)
        tp += gp and pp
        fp += pp and not gp
        fn += gp and not pp
    return EvalReport(tp, fp, fn, category_report(gold, pred).per_category, hmap)


def category_report(gold: LabelSeqs, pred: LabelSeqs) -> CategoryReport:
    """Exact-category token counts (B/I prefixes ignored)."""
    per: dict[str, Counts] = {}
    for g, p in _streams(gold, pred):
        gc, pc = label_category(g), label_category(p)
        if gc is not None and gc == pc:
            per.setdefault(gc.value, Counts()).tp += 1
            continue
        if gc is not None:
            per.setdefault(gc.value, Counts()).fn += 1
        if pc is not None:
            per.setdefault(pc.value, Counts()).fp += 1
    return CategoryReport(dict(sorted(per.items())))


def format_report(report: EvalReport) -> str:
    lines = [f"tp={report.tp} fp={report.fp} fn={report.fn}",
             f"precision={report.precision:.4f} recall={report.recall:.4f} f1={report.f1:.4f}"]
    for cat, c in report.per_category.items():
        lines.append(f"  {cat:<11s} p={c.precision:.4f} r={c.recall:.4f} f1={c.f1:.4f}"
                     f" (tp={c.tp} fp={c.fp} fn={c.fn})")
    return "\n".join(lines)
