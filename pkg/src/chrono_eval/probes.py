"""Knowledge-cutoff probes: presidents and major events.

Each probe asks a model to fill in a blank whose answer only became knowable in
``event_year``. A model is scored pre-cutoff on probes with
``event_year <= cutoff`` and post-cutoff otherwise; a leak-free model should
score zero post-cutoff.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Optional

from .gateway import DecodeParams, Gateway, GatewayError, ModelEndpoint

PRESIDENT_BUDGET = 2
EVENT_BUDGET = 3


class UnknownEvent(KeyError):
    pass


@dataclass(frozen=True)
class ProbeSpec:
    probe_id: str
    kind: str  # "President" or "Event"
    event_year: int
    prompt: str
    accepted_answers: tuple[str, ...]
    answer_token_budget: int

    def __post_init__(self):
        if self.kind not in ("President", "Event"):
            raise ValueError(f"unknown probe kind {self.kind!r}")
        if not self.accepted_answers or not all(a.strip() for a in self.accepted_answers):
            raise ValueError(f"{self.probe_id}: accepted answers must be non-empty")
        expected = PRESIDENT_BUDGET if self.kind == "President" else EVENT_BUDGET
        if self.answer_token_budget != expected:
            raise ValueError(f"{self.probe_id}: token budget {self.answer_token_budget} != {expected}")


def _load(name: str) -> list[dict]:
    return json.loads(resources.files("chrono_eval.data").joinpath(name).read_text(encoding="utf-8"))


def load_presidents() -> list[tuple[int, str, tuple[str, ...]]]:
    return [(p["election_year"], p["name"], tuple(p["accepted"])) for p in _load("presidents.json")]


def build_president_probe(presidents: list, p: int) -> ProbeSpec:
    """Probe for the ``p``-th entry of a chronological presidents list.

    Entries are ``(election_year, name)`` or ``(election_year, name, accepted)``;
    each line of the prompt states the year the president took office, i.e.
    the year after the election.
    """
    if p < 3 or p >= len(presidents):
        raise IndexError(f"president probe needs three predecessors; got index {p} of {len(presidents)}")
    lines = ["U.S. Presidents in chronological order:"]
    for entry in presidents[p - 3:p]:
        lines.append(f"Took office in {entry[0] + 1}: President {entry[1]}")
    target = presidents[p]
    lines.append(f"Took office in {target[0] + 1}: President")
    accepted = tuple(target[2]) if len(target) > 2 else (target[1],)
    return ProbeSpec(
        probe_id=f"president-{target[0]}",
        kind="President",
        event_year=target[0],
        prompt="\n".join(lines),
        accepted_answers=accepted,
        answer_token_budget=PRESIDENT_BUDGET,
    )


def president_suite(years=(1992, 2000, 2008, 2016, 2020, 2024)) -> list[ProbeSpec]:
    presidents = load_presidents()
    index = {y: i for i, (y, _, _) in enumerate(presidents)}
    return [build_president_probe(presidents, index[y]) for y in years]


def build_event_probe(event_year: int) -> ProbeSpec:
    events = {e["event_year"]: e for e in _load("events.json")}
    if event_year not in events:
        raise UnknownEvent(f"no event probe for {event_year}; known: {sorted(events)}")
    e = events[event_year]
    return ProbeSpec(
        probe_id=f"event-{event_year}",
        kind="Event",
        event_year=event_year,
        prompt=e["prompt"],
        accepted_answers=tuple(e["accepted"]),
        answer_token_budget=EVENT_BUDGET,
    )


def event_suite() -> list[ProbeSpec]:
    return [build_event_probe(e["event_year"]) for e in _load("events.json")]


def _norm(s: str) -> str:
    return re.sub(r"\s+", " ", s).strip().casefold()


def score_continuation(spec: ProbeSpec, continuation: str) -> bool:
    text = _norm(continuation)
    return any(_norm(a) in text for a in spec.accepted_answers)


def regime(event_year: int, cutoff: int) -> str:
    return "PostCutoff" if event_year > cutoff else "PreCutoff"


def truncate_continuation(text: str, tokens: Optional[list[str]], budget: int) -> str:
    """Keep the first ``budget`` tokens, by model tokens when the server returned them."""
    if tokens:
        return "".join(tokens[:budget])
    return " ".join(text.split()[:budget])


@dataclass
class ProbeResult:
    probe_id: str
    model_id: str
    row: str
    cutoff: int
    continuation: Optional[str]
    correct: Optional[bool]
    regime: str
    error: Optional[str] = None

    @property
    def scored(self) -> bool:
        return self.error is None


@dataclass
class ModelRow:
    """A row of the grid: a single vintage, or the realtime composite."""

    name: str
    endpoint: Optional[ModelEndpoint] = None
    cutoff: Optional[int] = None
    in_series: bool = True
    # realtime rows pick a vintage per probe from here
    vintages: dict[int, ModelEndpoint] = field(default_factory=dict)

    @property
    def realtime(self) -> bool:
        return self.endpoint is None


@dataclass
class AccuracyGrid:
    probes: list[str]
    rows: list[str]
    cells: dict[tuple[str, str], ProbeResult]
    tallies: dict[str, dict[str, int]]
    series: dict[str, int]
    unscored: list[dict]

    def to_json(self) -> dict:
        return {
            "probes": self.probes,
            "rows": self.rows,
            "cells": [asdict(self.cells[k]) for k in sorted(self.cells, key=self._order)],
            "tallies": self.tallies,
            "series": self.series,
            "unscored": self.unscored,
        }

    def _order(self, key):
        return self.rows.index(key[0]), self.probes.index(key[1])

    def render_table(self) -> str:
        """Plain-text table: ``*`` marks a correct cell, ``[...]`` a post-cutoff cell."""
        headers = ["model"] + self.probes + ["pre", "post"]
        body = []
        for r in self.rows:
            line = [r]
            for p in self.probes:
                c = self.cells.get((r, p))
                if c is None:
                    line.append("---")
                    continue
                txt = "ERR" if not c.scored else repr(c.continuation)[1:-1]
                if c.correct:
                    txt = "*" + txt
                if c.regime == "PostCutoff":
                    txt = f"[{txt}]"
                line.append(txt)
            t = self.tallies[r]
            line.append(f"{t['pre_correct']}/{t['pre_total']}" if t["pre_total"] else "---")
            line.append(f"{t['post_correct']}/{t['post_total']}" if t["post_total"] else "---")
            body.append(line)
        s = self.series
        foot = ["series"] + [""] * len(self.probes) + [
            f"{s['pre_correct']}/{s['pre_total']}", f"{s['post_correct']}/{s['post_total']}"]
        rows = [headers] + body + [foot]
        widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows)


def realtime_vintage(event_year: int, vintages) -> Optional[int]:
    """Latest vintage strictly before the event year."""
    earlier = [v for v in vintages if v < event_year]
    return max(earlier) if earlier else None


def run_probe_grid(
    rows: list[ModelRow],
    probes: list[ProbeSpec],
    gateway: Gateway,
    skip: frozenset = frozenset(),
) -> AccuracyGrid:
    """Greedy-decode every (row, probe) cell, score it and tally by regime.

    Cells in ``skip`` (``(row name, probe_id)`` pairs) are left out, as are
    realtime cells with no vintage before the event. Gateway failures become
    unscored cells, excluded from the tallies.
    """
    cells: dict[tuple[str, str], ProbeResult] = {}
    unscored = []
    for row in rows:
        for spec in probes:
            if (row.name, spec.probe_id) in skip:
                continue
            if row.realtime:
                v = realtime_vintage(spec.event_year, row.vintages)
                if v is None:
                    continue
                endpoint, cutoff = row.vintages[v], v
            else:
                endpoint, cutoff = row.endpoint, row.cutoff
            params = DecodeParams(temperature=0.0, max_tokens=spec.answer_token_budget)
            result = ProbeResult(spec.probe_id, endpoint.model_id, row.name, cutoff, None, None,
                                 regime(spec.event_year, cutoff))
            try:
                rec = gateway.complete(endpoint, spec.prompt, params)
            except GatewayError as exc:
                result.error = f"{type(exc).__name__}: {exc}"
                unscored.append({"row": row.name, "probe_id": spec.probe_id, "error": result.error})
            else:
                result.continuation = truncate_continuation(rec.text, rec.tokens, spec.answer_token_budget)
                result.correct = score_continuation(spec, result.continuation)
            cells[(row.name, spec.probe_id)] = result

    tallies = {}
    series = dict(pre_correct=0, pre_total=0, post_correct=0, post_total=0)
    for row in rows:
        t = dict(pre_correct=0, pre_total=0, post_correct=0, post_total=0)
        for spec in probes:
            c = cells.get((row.name, spec.probe_id))
            if c is None or not c.scored:
                continue
            side = "pre" if c.regime == "PreCutoff" else "post"
            t[f"{side}_total"] += 1
            t[f"{side}_correct"] += int(c.correct)
        tallies[row.name] = t
        if row.in_series:
            for k in series:
                series[k] += t[k]
    return AccuracyGrid([p.probe_id for p in probes], [r.name for r in rows], cells, tallies, series, unscored)
