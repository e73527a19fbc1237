"""Aggregated metric reports and their on-disk formats.

One MetricsReport captures a single generator checkpoint's evaluation:
manifold fidelity/diversity, per-class plausibility, and downstream
utility. Writers emit metrics.json, plausibility.csv (class,rate,n),
ablation.csv (fraction,f1,accuracy,precision,recall), and matplotlib PNGs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from cellforge.evalx.downstream import DOWNSTREAM_KEYS
from cellforge.evalx.plausibility import PlausibilityTable

ABLATION_HEADER = ("fraction",) + DOWNSTREAM_KEYS


@dataclass
class MetricsReport:
    precision: float
    recall: float
    coverage: float
    k: int
    per_class_plausibility: dict[str, float]
    downstream: dict[str, float]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("precision", "recall", "coverage"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} outside [0, 1]: {value}")
        for code, rate in self.per_class_plausibility.items():
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"plausibility rate for {code} outside [0, 1]: {rate}")

    @property
    def macro_plausibility(self) -> float:
        rates = self.per_class_plausibility
        return sum(rates.values()) / len(rates) if rates else 0.0

    def to_json(self) -> str:
        payload = asdict(self)
        payload["macro_plausibility"] = self.macro_plausibility
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        payload = json.loads(text)
        payload.pop("macro_plausibility", None)
        return cls(**payload)


def write_metrics_json(report: MetricsReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json() + "\n")
    return path


def load_metrics_json(path: Union[str, Path]) -> MetricsReport:
    return MetricsReport.from_json(Path(path).read_text())


def write_plausibility_csv(table: PlausibilityTable, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "rate", "n"])
        for code in sorted(table.rates):
            writer.writerow([code, table.rates[code], table.counts[code]])
    return path


def write_ablation_csv(rows: Sequence[Mapping[str, float]], path: Union[str, Path]) -> Path:
    """One row per feedback fraction, columns fraction,f1,accuracy,precision,recall."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_HEADER)
        for row in rows:
            writer.writerow([row[key] for key in ABLATION_HEADER])
    return path


def plot_ablation(rows: Sequence[Mapping[str, float]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(rows, key=lambda r: r["fraction"])
    fractions = [r["fraction"] for r in ordered]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in DOWNSTREAM_KEYS:
        ax.plot(fractions, [r[key] for r in ordered], marker="o", label=key)
    ax.set_xlabel("feedback fraction")
    ax.set_ylabel("downstream score (macro)")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_plausibility(
    tables: Mapping[str, PlausibilityTable], path: Union[str, Path]
) -> Path:
    """Grouped per-class bars, one group color per named arm."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    codes = sorted(next(iter(tables.values())).rates)
    x = np.arange(len(codes))
    width = 0.8 / max(len(tables), 1)
    fig, ax = plt.subplots(figsize=(max(6, len(codes) * 0.6), 4))
    for i, (name, table) in enumerate(tables.items()):
        ax.bar(x + i * width, [table.rates.get(c, 0.0) for c in codes], width, label=name)
    ax.set_xticks(x + width * (len(tables) - 1) / 2)
    ax.set_xticklabels(codes, rotation=45, ha="right")
    ax.set_ylabel("plausible fraction")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
