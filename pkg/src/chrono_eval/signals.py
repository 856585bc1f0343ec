"""Headline classification into favorable (H), unfavorable (L) and unclear (U) signals."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from datetime import date
from typing import Iterable

from .gateway import DecodeParams, Gateway, ModelEndpoint

TRADING_TEMPLATE = (
    "### Instruction:\n"
    "Classify this news headline as either FAVORABLE, or UNFAVORABLE, or UNCLEAR "
    "for the stock price of {company}.\n"
    "### Input:\n"
    "{headlines}\n"
    "### Response:"
)
CLASSIFY_MAX_TOKENS = 8

_FIRST_WORD = re.compile(r"[^\W\d_]+")


class DuplicateKey(ValueError):
    pass


@dataclass(frozen=True)
class HeadlineBundle:
    date: date
    firm_id: str
    firm_name: str
    headlines: tuple[str, ...]

    def __post_init__(self):
        if not self.headlines:
            raise ValueError(f"{self.firm_id} on {self.date}: no headlines")
        object.__setattr__(self, "headlines", tuple(self.headlines))

    @classmethod
    def from_json(cls, d: dict) -> "HeadlineBundle":
        return cls(date.fromisoformat(d["date"]), str(d["firm_id"]), d["firm_name"], tuple(d["headlines"]))


@dataclass(frozen=True)
class SignalRecord:
    date: date
    firm_id: str
    signal: str
    first_word: str
    raw_response: str
    model_id: str

    def to_json(self) -> dict:
        return {"date": self.date.isoformat(), "firm_id": self.firm_id, "signal": self.signal,
                "first_word": self.first_word, "model_id": self.model_id}


def render_trading_prompt(bundle: HeadlineBundle) -> str:
    return TRADING_TEMPLATE.format(company=bundle.firm_name, headlines="\n".join(bundle.headlines))


def parse_signal(raw_response: str) -> tuple[str, str]:
    """First alphabetic run decides: favorable -> H, unfavorable -> L, else U."""
    m = _FIRST_WORD.search(raw_response or "")
    word = m.group(0) if m else ""
    key = word.casefold()
    if key == "favorable":
        return "H", word
    if key == "unfavorable":
        return "L", word
    return "U", word


def classify_panel(
    bundles: Iterable[HeadlineBundle],
    model: ModelEndpoint,
    gateway: Gateway,
    max_in_flight: int = 4,
    max_tokens: int = CLASSIFY_MAX_TOKENS,
) -> tuple[list[SignalRecord], list[HeadlineBundle]]:
    """Classify each firm-day bundle. Returns (signals sorted by date/firm, quarantined bundles)."""
    bundles = list(bundles)
    seen = set()
    for b in bundles:
        key = (b.date, b.firm_id)
        if key in seen:
            raise DuplicateKey(f"duplicate bundle for {b.firm_id} on {b.date}")
        seen.add(key)
    bundles.sort(key=lambda b: (b.date, b.firm_id))
    params = DecodeParams(temperature=0.0, max_tokens=max_tokens)
    batch = gateway.complete_batch(model, [render_trading_prompt(b) for b in bundles], params, max_in_flight)
    signals, quarantine = [], []
    for b, rec in zip(bundles, batch.records):
        if rec is None:
            quarantine.append(b)
            continue
        sig, word = parse_signal(rec.text)
        signals.append(SignalRecord(b.date, b.firm_id, sig, word, rec.text, model.model_id))
    return signals, quarantine


def write_signals(path, signals: Iterable[SignalRecord]):
    with open(path, "w", encoding="utf-8") as fh:
        for s in signals:
            fh.write(json.dumps(s.to_json(), ensure_ascii=False) + "\n")


def read_signals(path) -> list[SignalRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(SignalRecord(date.fromisoformat(d["date"]), str(d["firm_id"]), d["signal"],
                                        d.get("first_word", ""), d.get("raw_response", ""), d.get("model_id", "")))
    return out


def bundle_to_json(b: HeadlineBundle) -> dict:
    d = asdict(b)
    d["date"] = b.date.isoformat()
    d["headlines"] = list(b.headlines)
    return d
