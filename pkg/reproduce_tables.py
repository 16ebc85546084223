from __future__ import annotations

import argparse
import json
from collections import defaultdict
from pathlib import Path
from statistics import mean

from osbf_speller.evaluation import EvalReport, class_split, read_results_csv


# (label, dataset, classifier, method, mode, column, documented value)
SPOT_CHECKS = [
    ("OSBF L2-SVM accuracy, no stopping", "ALSP300Speller", "l2", "osbf", "nostop", "accuracy", 0.963),
    ("OSBF L2-SVM accuracy, no stopping", "AMUSE", "l2", "osbf", "nostop", "accuracy", 0.796),
    ("OSBF M-SVM accuracy, no stopping", "ALSP300Speller", "msvm", "osbf", "nostop", "accuracy", 0.975),
    ("OSBF M-SVM accuracy, no stopping", "AMUSE", "msvm", "osbf", "nostop", "accuracy", 0.806),
    ("OSBF M-SVM ITR (bit/min), early stopping", "ALSP300Speller", "msvm", "osbf", "earlystop", "itr", 21.79),
]

Key = tuple[str, str, str, str]


def _index(rows: list[dict[str, str]]) -> dict[Key, list[dict[str, str]]]:
    grouped: dict[Key, list[dict[str, str]]] = defaultdict(list)
    for row in rows:
        grouped[(row["dataset"], row["classifier"], row["method"], row["mode"])].append(row)
    return grouped


def _mean(grouped: dict[Key, list[dict[str, str]]], key: Key, column: str) -> float | None:
    rows = grouped.get(key)
    if not rows:
        return None
    return mean(float(row[column]) for row in rows)


def _cell(value: float | None, digits: int = 3) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def _print_table(title: str, header: list[str], body: list[list[str]]) -> None:
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    print(title)
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    print("  ".join("-" * w for w in widths))
    for row in body:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    print()


def _datasets(rows: list[dict[str, str]]) -> list[str]:
    return sorted({row["dataset"] for row in rows})


def nostop_accuracy_table(rows: list[dict[str, str]]) -> list[list[str]]:
    grouped = _index(rows)
    body = []
    for dataset in _datasets(rows):
        line = [dataset]
        for classifier in ("l1", "l2"):
            for method in ("dv_med", "sbf", "osbf"):
                line.append(_cell(_mean(grouped, (dataset, classifier, method, "nostop"), "accuracy")))
        body.append(line)
    return body


def hyperplane_table(rows: list[dict[str, str]]) -> list[list[str]]:
    grouped = _index(rows)
    return [
        [dataset] + [_cell(_mean(grouped, (dataset, c, "osbf", "nostop"), "accuracy")) for c in ("l1", "l2", "msvm")]
        for dataset in _datasets(rows)
    ]


def earlystop_table(rows: list[dict[str, str]]) -> list[list[str]]:
    grouped = _index(rows)
    body = []
    for dataset in _datasets(rows):
        line = [dataset]
        for classifier in ("l1", "l2", "msvm"):
            key = (dataset, classifier, "osbf", "earlystop")
            line += [_cell(_mean(grouped, key, "accuracy")), _cell(_mean(grouped, key, "mean_iters"), 2)]
            line.append(_cell(_mean(grouped, key, "itr"), 2))
        body.append(line)
    return body


def class_split_table(rows: list[dict[str, str]], standard: str) -> list[list[str]]:
    reports: dict[tuple[str, str], dict[str, EvalReport]] = defaultdict(dict)
    for row in rows:
        if row["method"] == "osbf" and row["mode"] == "nostop" and row["classifier"] in (standard, "msvm"):
            reports[(row["dataset"], row["classifier"])][row["subject"]] = EvalReport.from_csv_row(row)

    body = []
    for dataset in _datasets(rows):
        std, msvm = reports[(dataset, standard)], reports[(dataset, "msvm")]
        paired = sorted(set(std) & set(msvm))
        split = class_split({s: std[s] for s in paired}, {s: msvm[s] for s in paired})
        for label, key in (("class 1", "class1"), ("class 2", "class2")):
            part = split[key]
            body.append(
                [dataset, label, str(len(part["subjects"])), _cell(part["standard"]), _cell(part["msvm"])]
            )
    return body


def spot_checks(rows: list[dict[str, str]]) -> list[list[str]]:
    grouped = _index(rows)
    body = []
    for label, dataset, classifier, method, mode, column, documented in SPOT_CHECKS:
        reproduced = _mean(grouped, (dataset, classifier, method, mode), column)
        body.append([label, dataset, f"{documented}", _cell(reproduced, 3 if column == "accuracy" else 2)])
    return body


def build_tables(rows: list[dict[str, str]], standard: str = "l2") -> dict[str, tuple[str, list[str], list[list[str]]]]:
    return {
        "nostop_accuracy": (
            "Character accuracy, no stopping",
            ["dataset", "L1 DV-med", "L1 SBF", "L1 OSBF", "L2 DV-med", "L2 SBF", "L2 OSBF"],
            nostop_accuracy_table(rows),
        ),
        "hyperplanes": (
            "OSBF accuracy by hyperplane, no stopping",
            ["dataset", "L1-SVM", "L2-SVM", "M-SVM"],
            hyperplane_table(rows),
        ),
        "earlystop": (
            "OSBF early stopping: accuracy, mean iterations, ITR (bit/min)",
            ["dataset"] + [f"{c} {m}" for c in ("L1", "L2", "M") for m in ("acc", "iters", "ITR")],
            earlystop_table(rows),
        ),
        "class_split": (
            f"Class split, OSBF no stopping ({standard.upper()}-SVM vs M-SVM)",
            ["dataset", "class", "subjects", standard.upper(), "M-SVM"],
            class_split_table(rows, standard),
        ),
        "spot_checks": (
            "Spot checks (documented vs reproduced)",
            ["figure", "dataset", "documented", "reproduced"],
            spot_checks(rows),
        ),
    }


def main() -> None:
    parser = argparse.ArgumentParser(
        description="Aggregate a results.csv into accuracy, hyperplane, early-stopping and class-split tables."
    )
    parser.add_argument("results", nargs="?", default="results/results.csv")
    parser.add_argument("--standard", choices=("l1", "l2"), default="l2", help="Standard SVM compared with M-SVM")
    parser.add_argument("--json-out", default="", help="Optional path for the tables as JSON")
    args = parser.parse_args()

    path = Path(args.results)
    if not path.exists():
        raise SystemExit(f"Results file not found: {path}. Run `python -m osbf_speller run` first.")
    rows = read_results_csv(path)
    if not rows:
        raise SystemExit(f"{path} holds no result rows")

    tables = build_tables(rows, args.standard)
    for title, header, body in tables.values():
        _print_table(title, header, body)

    if args.json_out:
        payload = {name: {"header": header, "rows": body} for name, (_, header, body) in tables.items()}
        Path(args.json_out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        print(f"Saved: {args.json_out}")


if __name__ == "__main__":
    main()
