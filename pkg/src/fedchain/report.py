"""Write a run's artifacts as CSV, JSON lines and a JSON summary.

Everything except ``timings.csv`` and ``delays.csv`` (wall-clock durations)
is a pure function of the configuration, so two runs of one config give
byte-identical files.
"""
from __future__ import annotations

import csv
import json
from collections import Counter, OrderedDict
from pathlib import Path

from .cas import OpKind, summarize
from .protocol import MANAGER_ID, RunArtifacts

METRICS_FILE = "metrics.csv"
GAS_FILE = "gas.csv"
TIMINGS_FILE = "timings.csv"
DELAYS_FILE = "delays.csv"
ROUNDS_FILE = "rounds.jsonl"
REPORT_FILE = "report.json"

GAS_COLUMNS = ["tx_index", "sender", "function", "status", "gas_used"]
TIMING_COLUMNS = ["actor", "op_kind", "payload_len", "duration_us"]
DELAY_COLUMNS = ["role", "op_kind", "count", "mean_us", "std_us"]


def metrics_columns(n_classes):
    cols = ["round", "node_scope", "accuracy", "macro_f1", "weighted_f1"]
    for stat in ("precision", "recall", "f1", "support"):
        cols += [f"{stat}_{c}" for c in range(n_classes)]
    return cols


def _metrics_row(round, scope, m):
    return [round, scope, m.accuracy, m.macro_f1, m.weighted_f1,
            *m.precision, *m.recall, *m.f1, *m.support]


def role_of(actor: str) -> str:
    return "manager" if actor == MANAGER_ID else "collaborator"


def _status(receipt):
    if receipt.accepted:
        return receipt.status.value
    return f"{receipt.status.value}({receipt.reason})"


def gas_table(receipts):
    """Per-function count, total and mean gas over accepted transactions."""
    table = OrderedDict()
    for r in receipts:
        if not r.accepted:
            continue
        row = table.setdefault(r.function, {"count": 0, "total_gas": 0})
        row["count"] += 1
        row["total_gas"] += r.gas_used
    for row in table.values():
        row["mean_gas"] = row["total_gas"] / row["count"]
    return dict(table)


def build_report(art: RunArtifacts, config_text: str) -> dict:
    cfg = art.config
    op_counts = Counter((role_of(t.actor), t.op_kind.value) for t in art.timings)
    op_bytes = Counter()
    for t in art.timings:
        op_bytes[(role_of(t.actor), t.op_kind.value)] += t.payload_len
    final = art.metrics[-1] if art.metrics else None
    return {
        "config": cfg.to_dict(),
        "config_text": config_text,
        "rounds": [o.to_dict() for o in art.outcomes],
        "metrics": [dict(round=i + 1, **m.to_dict()) for i, m in enumerate(art.metrics)],
        "final": final.to_dict() if final else None,
        "centralized": art.centralized.to_dict() if art.centralized else None,
        "gas": {
            "by_function": gas_table(art.receipts),
            "total_gas": sum(r.gas_used for r in art.receipts),
            "transactions": len(art.receipts),
            "reverted": sum(1 for r in art.receipts if not r.accepted),
        },
        "storage": [
            {"role": role, "op_kind": op, "count": n, "bytes": op_bytes[(role, op)]}
            for (role, op), n in sorted(op_counts.items())
        ],
        "events": len(art.events),
        "collaborator_log": {k: [list(map(str, e)) for e in v]
                             for k, v in sorted(art.collaborator_logs.items()) if v},
    }


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_reports(art: RunArtifacts, out_dir, config_text: str) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_classes = len(art.config.dataset.class_proportions)

    rows = [_metrics_row(i + 1, "global", m) for i, m in enumerate(art.metrics)]
    if art.centralized is not None:
        rows.append(_metrics_row(art.config.rounds, "centralized", art.centralized))
    _write_csv(out / METRICS_FILE, metrics_columns(n_classes), rows)

    _write_csv(out / GAS_FILE, GAS_COLUMNS, [
        [r.tx_index, r.sender, r.function, _status(r), r.gas_used] for r in art.receipts
    ])
    _write_csv(out / TIMINGS_FILE, TIMING_COLUMNS, [
        [t.actor, t.op_kind.value, t.payload_len, f"{t.duration_us:.3f}"] for t in art.timings
    ])
    delay_rows = []
    for role in ("manager", "collaborator"):
        for op in OpKind:
            s = summarize([t for t in art.timings if role_of(t.actor) == role], op_kind=op)
            delay_rows.append([role, op.value, s["count"], f"{s['mean_us']:.3f}", f"{s['std_us']:.3f}"])
    _write_csv(out / DELAYS_FILE, DELAY_COLUMNS, delay_rows)

    with open(out / ROUNDS_FILE, "w", encoding="utf-8") as fh:
        for o in art.outcomes:
            fh.write(json.dumps(o.to_dict(), sort_keys=True) + "\n")

    report = build_report(art, config_text)
    with open(out / REPORT_FILE, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report
