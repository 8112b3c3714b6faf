"""Allocation trace files: write, read, verify, and pivot to heatmaps.

A trace is line-delimited JSON: one header record (seed, config hash,
schedule, adapter roster), zero or more event records in application order,
and at most one trailing abort record. Keys are sorted and separators fixed,
so identical runs serialize to identical bytes.

``verify_trace`` replays the bookkeeping from scratch — rank bounds, step
legality against the schedule, per-step budget caps, mode conformance, and
exact rank conservation in bidirectional mode — and reports every violation
with its line context.
"""

from __future__ import annotations

import json

from .allocator import ALLOCATOR_MODES, BudgetSchedule
from .errors import TraceError
from .events import AllocationEvent

__all__ = [
    "trace_lines",
    "write_trace",
    "read_trace",
    "verify_trace",
    "heatmap_table",
    "heatmap_csv_lines",
]


def _dump(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def trace_lines(header, events, abort=None):
    lines = [_dump(header)]
    lines.extend(_dump(e.to_json()) for e in events)
    if abort is not None:
        lines.append(_dump(abort))
    return lines


def write_trace(path, header, events, abort=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(trace_lines(header, events, abort)) + "\n")


def _header_schedule(header):
    s = header["schedule"]
    return BudgetSchedule(
        b0=int(s["b0"]),
        t_warmup=int(s["t_warmup"]),
        t_final=int(s["t_final"]),
        total_steps=int(s["total_steps"]),
        delta_t=int(s["delta_t"]),
    )


def read_trace(path):
    """Parse a trace file into (header, events, abort-or-None).

    Structural problems raise TraceError naming the offending line (1-based).
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read().splitlines()
    except FileNotFoundError:
        raise TraceError(f"trace file not found: {path}") from None
    lines = [(i + 1, ln) for i, ln in enumerate(raw) if ln.strip()]
    if not lines:
        raise TraceError("line 1: empty trace")
    header = None
    events = []
    abort = None
    for lineno, text in lines:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TraceError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict) or "type" not in obj:
            raise TraceError(f"line {lineno}: record has no type")
        kind = obj["type"]
        if kind == "header":
            if header is not None:
                raise TraceError(f"line {lineno}: duplicate header")
            if events or abort:
                raise TraceError(f"line {lineno}: header must come first")
            for key in ("version", "seed", "mode", "metric", "schedule", "adapters"):
                if key not in obj:
                    raise TraceError(f"line {lineno}: header missing {key!r}")
            try:
                _header_schedule(obj)
            except Exception as exc:
                raise TraceError(f"line {lineno}: bad schedule ({exc})") from None
            header = obj
        elif kind == "event":
            if header is None:
                raise TraceError(f"line {lineno}: event before header")
            if abort is not None:
                raise TraceError(f"line {lineno}: event after abort record")
            try:
                events.append(AllocationEvent.from_json(obj))
            except Exception as exc:
                raise TraceError(f"line {lineno}: bad event ({exc})") from None
        elif kind == "abort":
            if header is None:
                raise TraceError(f"line {lineno}: abort before header")
            if abort is not None:
                raise TraceError(f"line {lineno}: duplicate abort record")
            abort = obj
        else:
            raise TraceError(f"line {lineno}: unknown record type {kind!r}")
    if header is None:
        raise TraceError("line 1: missing header record")
    return header, events, abort


def verify_trace(header, events, abort=None):
    """Replay a trace's bookkeeping; returns a list of problem strings."""
    problems = []
    schedule = _header_schedule(header)
    mode = header["mode"]
    if mode not in ALLOCATOR_MODES:
        problems.append(f"header: unknown mode {mode!r}")
        return problems
    ranks = {}
    caps = {}
    for meta in header["adapters"]:
        aid = meta["id"]
        if aid in ranks:
            problems.append(f"header: duplicate adapter {aid!r}")
        ranks[aid] = int(meta["r_init"])
        caps[aid] = int(meta["r_max"])
        if not 1 <= ranks[aid] <= caps[aid]:
            problems.append(f"header: adapter {aid!r} r_init outside [1, r_max]")

    by_step = {}
    last_step = None
    expand_seen = False
    for i, e in enumerate(events, start=1):
        where = f"event {i} (step {e.step}, {e.adapter_id})"
        if last_step is not None and e.step < last_step:
            problems.append(f"{where}: steps not in order")
        if e.step != last_step:
            expand_seen = False
        last_step = e.step
        if e.action == "expand":
            expand_seen = True
        elif expand_seen:
            problems.append(f"{where}: prune after expand within one step")
        if e.adapter_id not in ranks:
            problems.append(f"{where}: unknown adapter")
            continue
        if not schedule.is_allocation_step(e.step):
            problems.append(f"{where}: not an allocation step")
        if e.rank_before != ranks[e.adapter_id]:
            problems.append(
                f"{where}: rank_before {e.rank_before} but replay says {ranks[e.adapter_id]}"
            )
        if mode == "prune_only" and e.action == "expand":
            problems.append(f"{where}: expand in prune_only mode")
        if mode == "expand_only" and e.action == "prune":
            problems.append(f"{where}: prune in expand_only mode")
        ranks[e.adapter_id] = e.rank_after
        if not 1 <= e.rank_after <= caps[e.adapter_id]:
            problems.append(f"{where}: rank {e.rank_after} outside [1, {caps[e.adapter_id]}]")
        step_counts = by_step.setdefault(e.step, {"prune": 0, "expand": 0})
        step_counts[e.action] += 1

    for step in sorted(by_step):
        counts = by_step[step]
        budget = schedule.budget(step)
        for action in ("prune", "expand"):
            if counts[action] > budget:
                problems.append(
                    f"step {step}: {counts[action]} {action}s exceed budget {budget}"
                )
        if mode == "bidirectional" and counts["prune"] != counts["expand"]:
            problems.append(
                f"step {step}: bidirectional imbalance "
                f"({counts['prune']} prunes, {counts['expand']} expands)"
            )
    if abort is not None:
        for key in ("step", "reason"):
            if key not in abort:
                problems.append(f"abort record missing {key!r}")
    return problems


def heatmap_table(header, events):
    """Pivot a trace into a rank-over-time table.

    Returns (adapter_ids, column_labels, grid): one row per adapter in depth
    order, first column the initial rank, then one column per step that saw
    at least one event, holding each adapter's rank after that step.
    """
    meta = sorted(header["adapters"], key=lambda m: m["depth"])
    ids = [m["id"] for m in meta]
    ranks = {m["id"]: int(m["r_init"]) for m in meta}
    steps = sorted({e.step for e in events})
    grid = {aid: [ranks[aid]] for aid in ids}
    index = {aid: i for i, aid in enumerate(ids)}
    for step in steps:
        for e in events:
            if e.step == step:
                if e.adapter_id not in index:
                    raise TraceError(f"event for unknown adapter {e.adapter_id!r}")
                ranks[e.adapter_id] = e.rank_after
        for aid in ids:
            grid[aid].append(ranks[aid])
    labels = ["init"] + [str(s) for s in steps]
    return ids, labels, [grid[aid] for aid in ids]


def heatmap_csv_lines(header, events):
    """CSV rendering of :func:`heatmap_table` (adapter id + rank columns)."""
    ids, labels, grid = heatmap_table(header, events)
    lines = [",".join(["adapter"] + labels)]
    for aid, row in zip(ids, grid):
        lines.append(",".join([aid] + [str(r) for r in row]))
    return lines
