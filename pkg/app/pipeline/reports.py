"""
Text and JSON renderings of the evaluation results.

Relative-improvement tables use the cells Overall / Neutral / Emotional /
Happy / Angry / Sad / Calm; a positive value means the experimental model has
the lower EER. Absolute EERs are printed only on request.
"""

from app.models.scoring import CELLS, EerReport, relative_improvement

CELL_TITLES = {
    "overall": "Overall",
    "neutral": "Neutral",
    "emotional": "Emotional",
    "happy": "Happy",
    "angry": "Angry",
    "sad": "Sad",
    "calm": "Calm",
}
GAP_TITLE = "Performance gap (Emotional - Neutral)"


def format_percent(value):
    return "-" if value is None else f"{value:.2f}%"


def render_table(header, rows):
    """Pipe-separated fixed-width table; first column left-aligned, the rest right-aligned"""
    widths = [max(len(str(row[i])) for row in [header] + rows) for i in range(len(header))]

    def line(cells):
        return " | ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)
                          for i, (c, w) in enumerate(zip(cells, widths)))

    separator = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), separator] + [line(r) for r in rows]) + "\n"


def relative_improvement_summary(baseline, experiments):
    """JSON-ready summary.

    baseline: (name, description, EerReport); experiments: [(name, description, EerReport)].
    """
    name, description, baseline_eer = baseline
    return {
        "baseline": {"plan": name, "description": description, "eer": baseline_eer.to_dict()},
        "experiments": [
            {
                "plan": plan,
                "description": desc,
                "eer": eer.to_dict(),
                "relative": relative_improvement(baseline_eer, eer, plan).to_dict(),
            }
            for plan, desc, eer in experiments
        ],
    }


def _gap_percent(gap):
    return None if gap is None else gap * 100.0


def relative_improvement_text(summary, absolute=False, include_gap=True):
    """Relative EER improvement per experiment over the baseline.

    include_gap adds the (emotional - neutral) EER gap column in percentage points.
    """
    header = ["Experiment Configuration"] + [CELL_TITLES[c] for c in CELLS]
    if include_gap:
        header.append(GAP_TITLE)

    baseline = summary["baseline"]
    baseline_eer = EerReport.from_dict(baseline["eer"])
    rows = [[baseline["description"]] + ["-"] * len(CELLS)]
    if include_gap:
        rows[0].append(format_percent(_gap_percent(baseline_eer.neutral_vs_emotional_gap)))

    for experiment in summary["experiments"]:
        relative = experiment["relative"]
        row = [experiment["description"]] + [format_percent(relative["cells"].get(c)) for c in CELLS]
        if include_gap:
            row.append(format_percent(_gap_percent(relative["experimental_gap"])))
        rows.append(row)

    text = "Relative EER improvement over the baseline (positive = lower EER)\n\n" + render_table(header, rows)
    if absolute:
        text += "\n" + absolute_eer_text(summary)
    return text


def absolute_eer_text(summary):
    header = ["Model"] + [CELL_TITLES[c] for c in CELLS]
    rows = []
    for entry in [summary["baseline"]] + summary["experiments"]:
        eer = EerReport.from_dict(entry["eer"])
        rows.append([entry["description"]] + [format_percent(None if eer.cell(c) is None else eer.cell(c) * 100.0)
                                              for c in CELLS])
    return "Absolute EER\n\n" + render_table(header, rows)


def cosine_similarity_text(report, emotion):
    """Per-speaker mean ± std of neutral-vs-emotional cosines, authentic and synthetic rows.

    report is CosineSimilarityReport.to_dict().
    """
    speakers = sorted({row["speaker"] for row in report["rows"]})
    header = ["Case"] + speakers + ["Mean"]
    rows = []
    for case in ("authentic", "synthetic"):
        cells = {row["speaker"]: row for row in report["rows"] if row["case"] == case}
        row = [f"Neutral vs. {case.capitalize()} {emotion.capitalize()}"]
        row += [f"{cells[s]['mean']:.2f} ± {cells[s]['std']:.2f}" if s in cells else "-" for s in speakers]
        pooled = report["pooled"].get(case)
        row.append("-" if pooled is None else f"{pooled:.2f}")
        rows.append(row)
    title = f"Same-speaker cosine similarity, neutral vs {emotion} utterances (mean ± std)\n\n"
    return title + render_table(header, rows)


def media_far_text(reports):
    """reports: {model name: MediaFarReport.to_dict()}"""
    header = ["Model", "Threshold", "Overall FAR", "Neutral FAR", "Emotional FAR", "Within target"]
    rows = []
    target = None
    for name, report in reports.items():
        target = report["target_far"]
        far = report["far"]
        within = report["within_target"]["overall"]
        rows.append([
            name,
            f"{report['threshold']:.4f}",
            format_percent(None if far["overall"] is None else far["overall"] * 100.0),
            format_percent(None if far["neutral"] is None else far["neutral"] * 100.0),
            format_percent(None if far["emotional"] is None else far["emotional"] * 100.0),
            "-" if within is None else ("yes" if within else "no"),
        ])
    title = "Media-proxy false acceptance"
    if target is not None:
        title += f" at the {target * 100.0:.2f}% FAR threshold"
    return title + "\n\n" + render_table(header, rows)
