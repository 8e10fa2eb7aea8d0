"""Report assembly: metric tables (CSV + Markdown) and metric-vs-missing-rate plots."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from cyin.config import ABLATION_TAGS
from cyin.metrics import CLASSIFICATION_METRICS, REGRESSION_METRICS


@dataclass
class RunManifest:
    """Provenance record for one training run plus its evaluation rows."""

    config_path: str
    output_dir: str
    ablation: str
    seed: int
    results: list[dict] = field(default_factory=list)  # {"protocol", "seed", "metrics"}
    created_at: str = ""
    finished_at: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_path": self.config_path,
                "output_dir": self.output_dir,
                "ablation": self.ablation,
                "seed": self.seed,
                "results": self.results,
                "created_at": self.created_at,
                "finished_at": self.finished_at,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        return cls(
            config_path=d.get("config_path", ""),
            output_dir=d.get("output_dir", ""),
            ablation=d.get("ablation", "full"),
            seed=d.get("seed", 0),
            results=d.get("results", []),
            created_at=d.get("created_at", ""),
            finished_at=d.get("finished_at", ""),
        )


def load_manifests(directory: str) -> list[RunManifest]:
    manifests = []
    for name in sorted(os.listdir(directory)):
        if name.endswith("manifest.json"):
            with open(os.path.join(directory, name)) as fh:
                manifests.append(RunManifest.from_json(fh.read()))
    return manifests


def _metric_columns(results: list[dict]) -> list[str]:
    keys = set()
    for row in results:
        keys.update(row["metrics"])
    for ordering in (REGRESSION_METRICS, CLASSIFICATION_METRICS):
        if keys <= set(ordering):
            return [m for m in ordering if m in keys]
    return sorted(keys)


def write_tables(manifests: list[RunManifest], out_dir: str) -> tuple[str, str]:
    """Assemble CSV and Markdown tables grouped by protocol and ablation tag."""
    rows = []
    for manifest in manifests:
        for result in manifest.results:
            rows.append(
                {
                    "protocol": result["protocol"],
                    "ablation": manifest.ablation,
                    "seed": result["seed"],
                    "metrics": result["metrics"],
                }
            )
    columns = _metric_columns(rows) if rows else []
    ablation_rank = {tag: i for i, tag in enumerate(ABLATION_TAGS)}
    rows.sort(key=lambda r: (r["protocol"], ablation_rank.get(r["ablation"], 99), r["seed"]))

    csv_path = os.path.join(out_dir, "results.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["protocol", "ablation", "seed"] + columns)
        for row in rows:
            writer.writerow(
                [row["protocol"], row["ablation"], row["seed"]]
                + [f"{row['metrics'].get(c, float('nan')):.6f}" for c in columns]
            )

    md_path = os.path.join(out_dir, "results.md")
    with open(md_path, "w") as fh:
        fh.write("| protocol | ablation | seed | " + " | ".join(columns) + " |\n")
        fh.write("|" + "---|" * (3 + len(columns)) + "\n")
        for row in rows:
            vals = " | ".join(f"{row['metrics'].get(c, float('nan')):.4f}" for c in columns)
            fh.write(f"| {row['protocol']} | {row['ablation']} | {row['seed']} | {vals} |\n")
    return csv_path, md_path


def plot_metric_vs_mr(manifests: list[RunManifest], metric: str, out_path: str) -> str | None:
    """Line plot of one metric against the swept random missing rate, per ablation."""
    series: dict[str, dict[float, list[float]]] = {}
    for manifest in manifests:
        for result in manifest.results:
            protocol = result["protocol"]
            if not protocol.startswith("random:"):
                continue
            mr = float(protocol.split(":", 1)[1])
            if metric not in result["metrics"]:
                continue
            series.setdefault(manifest.ablation, {}).setdefault(mr, []).append(
                result["metrics"][metric]
            )
    if not series:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    all_mrs = sorted({mr for pts in series.values() for mr in pts})
    for ablation, pts in sorted(series.items()):
        mrs = sorted(pts)
        means = [sum(pts[m]) / len(pts[m]) for m in mrs]
        ax.plot(mrs, means, marker="o", label=ablation)
    ax.set_xlabel("missing rate")
    ax.set_ylabel(metric)
    ax.set_xticks(all_mrs)
    if min(all_mrs) < max(all_mrs):
        ax.set_xlim(min(all_mrs), max(all_mrs))
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
