"""Quantitative evaluation: the reconstruction ablation matrix and the
mask-based edit-success metric, written as JSON + markdown + CSV + figures."""

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from ..decoder.losses import perceptual_distance
from ..grounding import EditInstruction
from ..sampleopt import OptConfig, optimize_perturbations
from ..synthdata import COLOR_HUES, derive_edit_cases, load_split
from ..util import hue_distance, mean_hue, to_tensor
from .editing import EditPipeline

HUE_SUCCESS_DEG = 30.0
LOCALITY_RATIO = 0.25


@dataclass
class ReconRow:
    id: str
    cell: str
    l2: float
    perceptual: float


@dataclass
class EditRecord:
    case_id: str
    scene_id: str
    source_phrase: str
    target_phrase: str
    hue_to_target: float
    inside_change: float
    outside_change: float
    success: bool


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    edit_records: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    absent_cells: list = field(default_factory=list)

    def recompute_aggregates(self) -> dict:
        agg = {}
        cells = sorted({r.cell for r in self.rows})
        for cell in cells:
            rows = [r for r in self.rows if r.cell == cell]
            agg[cell] = {
                "n": len(rows),
                "mean_l2": float(np.mean([r.l2 for r in rows])),
                "mean_perceptual": float(np.mean([r.perceptual for r in rows])),
            }
        if self.edit_records:
            recs = self.edit_records
            inside = float(np.mean([r.inside_change for r in recs]))
            outside = float(np.mean([r.outside_change for r in recs]))
            agg["edit_success"] = {
                "n": len(recs),
                "success_rate": float(np.mean([r.success for r in recs])),
                "mean_inside_change": inside,
                "mean_outside_change": outside,
                "outside_over_inside": outside / inside if inside > 0 else float("inf"),
            }
        return agg


def reconstruction_metrics(pipeline: EditPipeline, scenes, cell: str, use_opt: bool, opt_config=None) -> list:
    rows = []
    encoder = pipeline.vse.image_encoder
    for scene in scenes:
        image = scene.image
        if use_opt:
            instr = _default_instruction(scene)
            opt = optimize_perturbations(
                image, instr, pipeline.vse, pipeline.generator, opt_config or OptConfig(), edges=pipeline.edges_for(image)
            )
            from ..decoder.generator import decode

            recon = decode(
                pipeline.generator, pipeline.vse.encode_image(image), pipeline.edges_for(image), opt.perturbations.tensors
            )
        else:
            recon = pipeline.reconstruct(image)
        l2 = float(np.sqrt(np.mean((recon.astype(np.float64) - image.astype(np.float64)) ** 2)))
        with torch.no_grad():
            perc = float(perceptual_distance(to_tensor(recon), to_tensor(image), encoder))
        rows.append(ReconRow(id=scene.id, cell=cell, l2=l2, perceptual=perc))
    return rows


def _default_instruction(scene) -> EditInstruction:
    """A canonical change-instruction for a scene (first shape, next color)."""
    shape = scene.shapes[0]
    colors = sorted(COLOR_HUES)
    target = next(c for c in colors if c != shape["color"])
    return EditInstruction(
        kind="change",
        source_phrase=f"{shape['color']} {shape['kind']}",
        target_phrase=f"{target} {shape['kind']}",
        alpha=1.0,
    )


def edit_success_metrics(pipeline: EditPipeline, scenes, cases, alpha: float = 1.0, use_opt: bool = False) -> list:
    """Score change-cases: hue inside the ground-truth mask must land near the
    target color and pixels outside the mask must stay close to the source."""
    by_id = {s.id: s for s in scenes}
    records = []
    for i, case in enumerate(cases):
        scene = by_id[case.scene_id]
        mask = scene.mask(case.shape_index)
        instr = EditInstruction(
            kind="change", source_phrase=case.source_phrase, target_phrase=case.target_phrase, alpha=alpha
        )
        result = pipeline.edit(scene.image, instr, use_opt=use_opt)
        out = result.image_out.astype(np.float64)
        src = scene.image.astype(np.float64)
        target_color = case.target_phrase.split()[0]
        hue_err = hue_distance(mean_hue(out[mask]), COLOR_HUES[target_color])
        diff = np.abs(out - src).mean(axis=2)
        inside = float(diff[mask].mean())
        outside = float(diff[~mask].mean())
        success = bool(hue_err < HUE_SUCCESS_DEG and outside < LOCALITY_RATIO * inside)
        records.append(
            EditRecord(
                case_id=f"case-{i:04d}",
                scene_id=scene.id,
                source_phrase=case.source_phrase,
                target_phrase=case.target_phrase,
                hue_to_target=float(hue_err),
                inside_change=inside,
                outside_change=outside,
                success=success,
            )
        )
    return records


def evaluate(
    corpus_root,
    split: str,
    cells: dict,
    limit: int = 64,
    edit_cases_limit: int = 60,
    edit_alpha: float = 1.0,
    opt_config: OptConfig = None,
    seed: int = 0,
) -> EvalReport:
    """Fill the ablation matrix over `cells` (name -> (pipeline, use_opt) or
    None for absent) and score derived edit cases on the first non-absent
    edge-conditioned cell."""
    scenes = load_split(corpus_root, split)[:limit]
    report = EvalReport()
    edit_pipeline = None
    for name, cell in cells.items():
        if cell is None:
            report.absent_cells.append(name)
            continue
        pipeline, use_opt = cell
        report.rows.extend(reconstruction_metrics(pipeline, scenes, name, use_opt, opt_config))
        if edit_pipeline is None and pipeline.use_edges:
            edit_pipeline = pipeline

    if edit_pipeline is not None and edit_cases_limit > 0:
        cases = derive_edit_cases(scenes, kinds=("change",))
        rng = np.random.default_rng(seed)
        if len(cases) > edit_cases_limit:
            cases = [cases[i] for i in rng.choice(len(cases), size=edit_cases_limit, replace=False)]
        report.edit_records = edit_success_metrics(edit_pipeline, scenes, cases, alpha=edit_alpha)

    report.aggregates = report.recompute_aggregates()
    return report


def write_report(report: EvalReport, out_dir) -> None:
    """report.json + report.md + report.csv + figures/*.png under out_dir."""
    out = Path(out_dir)
    (out / "figures").mkdir(parents=True, exist_ok=True)

    payload = {
        "aggregates": report.aggregates,
        "absent_cells": report.absent_cells,
        "rows": [asdict(r) for r in report.rows],
        "edit_records": [asdict(r) for r in report.edit_records],
    }
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    with open(out / "report.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "cell", "l2", "perceptual"])
        for r in report.rows:
            writer.writerow([r.id, r.cell, f"{r.l2:.6f}", f"{r.perceptual:.6f}"])

    lines = ["# Evaluation report", "", "## Reconstruction ablation", "", "| cell | n | mean L2 | mean perceptual |", "|---|---|---|---|"]
    for cell, agg in report.aggregates.items():
        if cell == "edit_success":
            continue
        lines.append(f"| {cell} | {agg['n']} | {agg['mean_l2']:.4f} | {agg['mean_perceptual']:.4f} |")
    for cell in report.absent_cells:
        lines.append(f"| {cell} | absent | - | - |")
    if "edit_success" in report.aggregates:
        es = report.aggregates["edit_success"]
        lines += [
            "",
            "## Edit success",
            "",
            f"- cases: {es['n']}",
            f"- success rate: {es['success_rate']:.3f}",
            f"- mean change inside mask: {es['mean_inside_change']:.4f}",
            f"- mean change outside mask: {es['mean_outside_change']:.4f}",
            f"- outside/inside ratio: {es['outside_over_inside']:.3f}",
        ]
    (out / "report.md").write_text("\n".join(lines) + "\n")

    _figures(report, out / "figures")


def _figures(report: EvalReport, fig_dir: Path) -> None:
    cells = [c for c in report.aggregates if c != "edit_success"]
    if cells:
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        for ax, key, label in zip(axes, ("mean_l2", "mean_perceptual"), ("reconstruction L2", "perceptual distance")):
            ax.bar(cells, [report.aggregates[c][key] for c in cells], color="#4878cf")
            ax.set_ylabel(label)
            ax.tick_params(axis="x", rotation=20)
        fig.tight_layout()
        fig.savefig(fig_dir / "reconstruction_cells.png", dpi=120)
        plt.close(fig)
    if report.edit_records:
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        axes[0].hist([r.hue_to_target for r in report.edit_records], bins=18, color="#4878cf")
        axes[0].axvline(HUE_SUCCESS_DEG, color="red", linestyle="--", label="success threshold")
        axes[0].set_xlabel("hue distance to target (deg)")
        axes[0].legend()
        axes[1].scatter(
            [r.inside_change for r in report.edit_records],
            [r.outside_change for r in report.edit_records],
            s=12,
            alpha=0.7,
        )
        lim = max(max(r.inside_change for r in report.edit_records), 1e-3)
        axes[1].plot([0, lim], [0, LOCALITY_RATIO * lim], "r--", label="locality bound")
        axes[1].set_xlabel("mean change inside mask")
        axes[1].set_ylabel("mean change outside mask")
        axes[1].legend()
        fig.tight_layout()
        fig.savefig(fig_dir / "edit_success.png", dpi=120)
        plt.close(fig)
