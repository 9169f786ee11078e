"""Scorecard rendering and the estimand results document."""

from __future__ import annotations

import csv
import io
import math
from typing import Any, Optional

from .estimands import EstimandResult, _jsonable
from .validation import Scorecard

COLUMNS = ("Level", "Test", "Statistic", "Value", "Threshold", "Pass/Fail")


class ReportError(ValueError):
    """A document would violate the reporting rules."""


def _cell(v: Any) -> str:
    if v is None:
        return "---"
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.4g}" if v != 0 else "0"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_cell(x) for x in v) + "]"
    return str(v)


def scorecard_dict(card: Scorecard) -> dict:
    return _jsonable({
        "header": card.header,
        "eps0": card.eps0,
        "eps1": card.eps1,
        "complete": card.complete,
        "stopped": card.stopped,
        "stop_reason": card.stop_reason,
        "all_mandatory_pass": card.all_mandatory_pass,
        "level_verdicts": {str(k): v for k, v in card.level_verdicts.items()},
        "licensed_estimands": card.licensed,
        "withheld_estimands": card.withheld,
        "copula_dependent_licensed": False,
        "rows": [
            {"level": r.level, "test": r.test, "statistic": r.statistic, "value": r.value,
             "threshold": r.threshold, "status": r.status, "details": r.details}
            for r in card.rows
        ],
    })


def _header_lines(card: Scorecard) -> list[str]:
    h = card.header
    lines = [
        f"seed: {h.get('seed')}  config hash: {h.get('config_hash')}  alpha: {h.get('alpha')}",
        f"tolerances: eps0_bar = {h.get('eps0_bar')}, eps1_bar = {h.get('eps1_bar')}",
        f"measured: eps0 = {_cell(card.eps0)}, eps1 = {_cell(card.eps1)}",
    ]
    if card.stopped:
        lines.append(card.stop_reason + " (scorecard incomplete)")
    return lines


def _table_rows(card: Scorecard) -> list[list[str]]:
    return [[str(r.level), r.test, r.statistic, _cell(r.value), _cell(r.threshold), r.status] for r in card.rows]


def scorecard_markdown(card: Scorecard) -> str:
    out = ["# Validation scorecard", ""]
    out += [f"- {line}" for line in _header_lines(card)]
    out += ["", "| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
    for row in _table_rows(card):
        out.append("| " + " | ".join(c.replace("|", "\\|") for c in row) + " |")
    out += ["", "## Licensed estimands", ""]
    out += [f"- {name}" for name in card.licensed] or ["- none"]
    out += ["", "## Withheld estimands", ""]
    out += [f"- {name}: {why}" for name, why in card.withheld.items()]
    return "\n".join(out) + "\n"


def scorecard_text(card: Scorecard) -> str:
    rows = [list(COLUMNS)] + _table_rows(card)
    widths = [max(len(r[i]) for r in rows) for i in range(len(COLUMNS))]
    lines = _header_lines(card) + [""]
    for j, r in enumerate(rows):
        lines.append(" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        if j == 0:
            lines.append("-+-".join("-" * w for w in widths))
    verdict = "ALL MANDATORY TESTS PASS" if card.all_mandatory_pass else "MANDATORY TEST FAILURE"
    lines += ["", verdict, "licensed: " + (", ".join(card.licensed) or "none")]
    return "\n".join(lines) + "\n"


def scorecard_csv(card: Scorecard) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    w.writerows(_table_rows(card))
    return buf.getvalue()


def results_document(results: list, header: dict, bounds: Optional[dict] = None,
                     csi: Optional[float] = None, skipped: Optional[dict] = None) -> dict:
    """Assemble estimand results; a copula-dependent value never appears without bounds and CSI.

    ``bounds`` maps estimand name to a serialized bounds entry.
    """
    bounds = bounds or {}
    entries = []
    for r in results:
        entry = r.to_dict() if isinstance(r, EstimandResult) else dict(r)
        if entry["copula_dependent"]:
            if csi is None:
                raise ReportError(f"{entry['name']}: copula-dependent result needs a CSI")
            b = bounds.get(entry["name"])
            if b is None:
                raise ReportError(f"{entry['name']}: copula-dependent result needs Frechet bounds")
            entry["bounds"] = b
            entry["csi"] = csi
        entries.append(entry)
    return _jsonable({"header": header, "results": entries, "skipped": skipped or {}})


def results_markdown(doc: dict) -> str:
    out = ["# Estimands", ""]
    h = doc["header"]
    out.append("- " + ", ".join(f"{k}: {v}" for k, v in h.items()))
    out += ["", "| Estimand | Value | MC s.e. | Fidelity | Copula-dependent | Bounds | CSI |", "|---|---|---|---|---|---|---|"]
    for e in doc["results"]:
        v = e["value"]
        shown = _cell(v) if not isinstance(v, (dict, list)) or len(str(v)) < 60 else "(curve, see JSON)"
        b = e.get("bounds")
        bshown = "---" if b is None else _cell([b.get("lower"), b.get("upper")]) if isinstance(b, dict) else _cell(b)
        se = e.get("mc_se")
        label = e["name"]
        if "regime" in e.get("details", {}):
            label += " (" + ",".join(str(g) for g in e["details"]["regime"]) + ")"
        se_shown = _cell(se) if not isinstance(se, (dict, list)) else "(per point)"
        out.append(f"| {label} | {shown} | {se_shown} | {e['fidelity_required']} | "
                   f"{'yes' if e['copula_dependent'] else 'no'} | {bshown} | {_cell(e.get('csi'))} |")
    if doc.get("skipped"):
        out += ["", "Skipped:"] + [f"- {k}: {v}" for k, v in doc["skipped"].items()]
    return "\n".join(out) + "\n"
