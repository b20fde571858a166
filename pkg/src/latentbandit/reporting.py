"""CSV outputs of a simulation run, schema checks and the summary table.

Every CSV starts with ``#`` comment lines carrying the tool version, file
kind, master seed and the full run configuration as JSON, followed by a
normal header row. Column meaning per kind:

``steps``    policy, group (index or ``all``), step, accuracy, accuracy_se,
             regret, regret_se, n_users. Accuracy/regret curves vs step.
``summary``  dataset, policy, num_groups, horizon, accuracy, accuracy_se,
             regret, regret_se, n_users. Final-step values, one row per policy.
``groups``   policy, group, step, accuracy, n_users. Per-group accuracy at a
             fixed step (15 by default).
``trace``    policy, group, user, step, item, rating, posterior_true,
             future_regret_true, cumulative_regret, estimate. Per-step
             diagnostics for a few users per group.
``scores``   policy, group, user, step, item, score, then post_0..post_{G-1}.
"""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from . import __version__
from .errors import SchemaError

REGRET_NOTE = "expected regret: set-based shortfall of asked items' group-mean ratings vs the true group's top-n"

SCHEMAS = {
    "steps": ["policy", "group", "step", "accuracy", "accuracy_se", "regret", "regret_se", "n_users"],
    "summary": ["dataset", "policy", "num_groups", "horizon", "accuracy", "accuracy_se", "regret", "regret_se", "n_users"],
    "groups": ["policy", "group", "step", "accuracy", "n_users"],
    "trace": [
        "policy",
        "group",
        "user",
        "step",
        "item",
        "rating",
        "posterior_true",
        "future_regret_true",
        "cumulative_regret",
        "estimate",
    ],
    "scores": ["policy", "group", "user", "step", "item", "score"],
}

_INT_COLS = {"step", "n_users", "num_groups", "horizon", "user", "item", "estimate"}
_STR_COLS = {"policy", "dataset", "group"}


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, kind: str, rows, config: dict, seed: int, extra_columns=()) -> None:
    header = SCHEMAS[kind] + list(extra_columns)
    buf = io.StringIO()
    buf.write(f"# latentbandit {__version__}\n")
    buf.write(f"# kind: {kind}\n")
    buf.write(f"# seed: {seed}\n")
    buf.write(f"# {REGRET_NOTE}\n")
    buf.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path):
    """Return ``(meta, header, rows)``; ``meta`` holds the comment key/values."""
    meta = {}
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            text = line[1:].strip()
            if text.startswith("latentbandit "):
                meta["version"] = text.split(" ", 1)[1]
            elif ":" in text:
                key, value = text.split(":", 1)
                meta[key.strip()] = value.strip()
        else:
            body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header is None:
        raise SchemaError(f"{path}: no header row")
    if "config" in meta:
        try:
            meta["config"] = json.loads(meta["config"])
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: config line is not JSON") from exc
    return meta, header, list(reader)


def check_csv(path) -> str:
    """Validate a produced CSV; returns its kind or raises :class:`SchemaError`."""
    meta, header, rows = read_csv(path)
    for key in ("version", "kind", "seed", "config"):
        if key not in meta:
            raise SchemaError(f"{path}: missing '{key}' header line")
    kind = meta["kind"]
    if kind not in SCHEMAS:
        raise SchemaError(f"{path}: unknown kind {kind!r}")
    expected = SCHEMAS[kind]
    if header[: len(expected)] != expected:
        raise SchemaError(f"{path}: columns {header} do not start with {expected}")
    extra = header[len(expected) :]
    if kind == "scores":
        if any(c != f"post_{i}" for i, c in enumerate(extra)):
            raise SchemaError(f"{path}: trailing columns must be post_0..post_N")
    elif extra:
        raise SchemaError(f"{path}: unexpected columns {extra}")
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise SchemaError(f"{path}: data row {lineno} has {len(row)} fields, expected {len(header)}")
        for col, value in zip(header, row):
            if col in _STR_COLS:
                if not value:
                    raise SchemaError(f"{path}: empty {col} in data row {lineno}")
                continue
            try:
                if col in _INT_COLS:
                    int(value)
                else:
                    x = float(value)
                    if col in ("accuracy", "posterior_true") and not (0.0 <= x <= 1.0):
                        raise SchemaError(f"{path}: {col}={value} outside [0, 1] in data row {lineno}")
                    if col.startswith("regret") and not math.isfinite(x):
                        raise SchemaError(f"{path}: non-finite {col} in data row {lineno}")
            except ValueError:
                raise SchemaError(f"{path}: {col}={value!r} is not numeric in data row {lineno}") from None
    return kind


# -- rows from a MetricsSummary ---------------------------------------------


def _se(x: np.ndarray) -> np.ndarray:
    """Standard error of the mean along axis 0."""
    n = x.shape[0]
    if n < 2:
        return np.zeros(x.shape[1:])
    return x.std(axis=0, ddof=1) / math.sqrt(n)


def step_rows(summary):
    correct = summary.correct.astype(np.float64)
    regret = summary.regret
    P, G, U, H = correct.shape
    for p, label in enumerate(summary.policies):
        for g in range(G):
            acc, acc_se = correct[p, g].mean(axis=0), _se(correct[p, g])
            reg, reg_se = regret[p, g].mean(axis=0), _se(regret[p, g])
            for n in range(H):
                yield [label, g, n + 1, acc[n], acc_se[n], reg[n], reg_se[n], U]
        flat_c = correct[p].reshape(G * U, H)
        flat_r = regret[p].reshape(G * U, H)
        acc, acc_se = flat_c.mean(axis=0), _se(flat_c)
        reg, reg_se = flat_r.mean(axis=0), _se(flat_r)
        for n in range(H):
            yield [label, "all", n + 1, acc[n], acc_se[n], reg[n], reg_se[n], G * U]


def summary_rows(summary, dataset: str):
    P, G, U, H = summary.correct.shape
    if H == 0:
        return
    for p, label in enumerate(summary.policies):
        c = summary.correct[p, :, :, -1].astype(np.float64).ravel()
        r = summary.regret[p, :, :, -1].ravel()
        yield [dataset, label, G, H, c.mean(), float(_se(c)), r.mean(), float(_se(r)), G * U]


def group_rows(summary, step: int):
    P, G, U, H = summary.correct.shape
    step = min(step, H)
    if step < 1:
        return
    for p, label in enumerate(summary.policies):
        for g in range(G):
            yield [label, g, step, summary.correct[p, g, :, step - 1].mean(), U]


def trace_rows(summary, users_per_group: int):
    if not summary.episodes:
        return
    for (label, g, i), ep in summary.episodes.items():
        if i >= users_per_group:
            continue
        for n, s in enumerate(ep.steps, start=1):
            yield [
                label,
                g,
                i,
                n,
                s.item,
                s.rating,
                float(s.posterior[g]),
                s.future_regret_true,
                s.cumulative_regret,
                s.estimate,
            ]


# -- summary table -----------------------------------------------------------


def merge_summaries(paths):
    """Combine summary CSVs into ``{(dataset, policy): {num_groups: (acc, regret)}}``.

    All inputs must share one horizon; a ``(dataset, policy, num_groups)``
    cell may appear only once.
    """
    cells = {}
    horizon = None
    horizon_src = None
    for path in paths:
        meta, header, rows = read_csv(path)
        if meta.get("kind") != "summary" or header != SCHEMAS["summary"]:
            raise SchemaError(f"{path}: not a summary file")
        for row in rows:
            rec = dict(zip(header, row))
            h = int(rec["horizon"])
            if horizon is None:
                horizon, horizon_src = h, path
            elif h != horizon:
                raise SchemaError(f"conflicting horizons: {horizon} in {horizon_src} vs {h} in {path}")
            key = (rec["dataset"], rec["policy"])
            k = int(rec["num_groups"])
            if k in cells.setdefault(key, {}):
                raise SchemaError(f"{path}: duplicate cell {key} x {k} groups")
            cells[key][k] = (float(rec["accuracy"]), float(rec["regret"]))
    return cells, horizon


def format_table(cells, horizon, exclude_from_marks=("oracle",)):
    """Plain-text and CSV renderings; ``*`` marks the best accuracy and lowest regret per column."""
    columns = sorted({k for row in cells.values() for k in row})
    keys = list(cells)
    best_acc, best_reg = {}, {}
    for k in columns:
        vals = [(cells[key][k], key) for key in keys if k in cells[key] and key[1] not in exclude_from_marks]
        if vals:
            best_acc[k] = max(v[0][0] for v in vals)
            best_reg[k] = min(v[0][1] for v in vals)

    def cell(key, k, which):
        if k not in cells[key]:
            return "-"
        acc, reg = cells[key][k]
        if which == "acc":
            mark = "*" if key[1] not in exclude_from_marks and acc == best_acc.get(k) else ""
            return f"{acc:.2f}{mark}"
        mark = "*" if key[1] not in exclude_from_marks and reg == best_reg.get(k) else ""
        return f"{reg:.1f}{mark}"

    head = ["dataset/policy"] + [f"acc@{k}" for k in columns] + [f"regret@{k}" for k in columns]
    body = []
    for key in keys:
        body.append([f"{key[0]}/{key[1]}"] + [cell(key, k, "acc") for k in columns] + [cell(key, k, "reg") for k in columns])
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    lines = [f"Performance after {horizon} iterations, averaged over all groups (* = best per column)"]
    lines.append("  ".join(h.ljust(w) for h, w in zip(head, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    text = "\n".join(lines) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    w.writerows(body)
    return text, buf.getvalue()
