"""Temporal screening of instruction-response pairs.

A judge model labels each pair 0 (knowledge available before the cutoff) or 1
(post-cutoff or doubtful). Only label 0 at confidence 10 is admitted.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional

from .gateway import DecodeParams, Gateway, GatewayError, ModelEndpoint

logger = logging.getLogger(__name__)

SOURCES = ("LLMsFromScratch", "GPT3SelfGenerated", "Tulu3Mixture", "Other")
SOURCE_STAGE = {"LLMsFromScratch": 1, "GPT3SelfGenerated": 2, "Tulu3Mixture": 3}
MIN_CUTOFF, MAX_CUTOFF = 1900, 2100

ALPACA_HEADER = (
    "Below is an instruction that describes a task. "
    "Write a response that appropriately completes the request."
)

CLASSIFIER_TEMPLATE = """\
You are provided with a user-assistant interaction. Your task is to determine whether the conversation contains any information that would have been unavailable or irrelevant prior to the year {next_year}.
Specifically, indicate whether the message includes any direct or indirect reference to:
1. A concept, company, product, technology, event, online review, or terminology that was created, discovered, or publicly introduced after {year}, or
2. A subject that only gained significant economic, cultural, scientific, or technological relevance after {year}, even if it existed before that date.
If such a reference is present anywhere in the conversation, return: 1
If the conversation is entirely composed of content that could have been generated using only knowledge available prior to {next_year}, return: 0
Clarifications:
- For conversations evaluated as low quality, also assign a label of 1.
- In cases of uncertainty or ambiguity, adopt a conservative approach and assign a label of 1.
- References to post-{year} entities such as GPT models, Kubernetes, TikTok, blockchain, COVID-19, Tesla, or similar modern constructs are strong indicators of a label of 1.
Return your answer strictly as a JSON object with the following fields:
- "label": either 0 or 1
- "confidence": a number from 0 to 10 (higher means more certain)
- "suspected term": a brief phrase (1-3 words) that triggered your label decision, or "none" if label=0
Example output: {{"label": 1, "confidence": 9, "suspected term": "GPT-3"}}
Here is the message:{conversation}"""


class ParseError(ValueError):
    """Judge output has no usable label object."""


class UnknownStage(ValueError):
    pass


@dataclass
class InstructionPair:
    id: str
    instruction: str
    response: str
    input: Optional[str] = None
    source: str = "Other"
    stage: int = 1

    def __post_init__(self):
        if not self.instruction or not self.response:
            raise ValueError(f"pair {self.id}: instruction and response must be non-empty")
        if self.source not in SOURCES:
            raise ValueError(f"pair {self.id}: unknown source {self.source!r}")
        expected = SOURCE_STAGE.get(self.source)
        if expected is not None and self.stage != expected:
            raise ValueError(f"pair {self.id}: source {self.source} belongs to stage {expected}, got {self.stage}")

    @classmethod
    def from_json(cls, d: dict) -> "InstructionPair":
        return cls(
            id=str(d["id"]),
            instruction=d["instruction"],
            response=d.get("output", d.get("response")),
            input=d.get("input") or None,
            source=d.get("source", "Other"),
            stage=int(d.get("stage", SOURCE_STAGE.get(d.get("source", "Other"), 1))),
        )

    def to_json(self) -> dict:
        d = {"id": self.id, "instruction": self.instruction}
        if self.input:
            d["input"] = self.input
        d.update(output=self.response, source=self.source, stage=self.stage)
        return d


@dataclass(frozen=True)
class TemporalLabel:
    pair_id: str
    label: int
    confidence: int
    suspected_term: str
    judge_model: str = ""


def check_cutoff(year: int) -> int:
    if not MIN_CUTOFF <= int(year) <= MAX_CUTOFF:
        raise ValueError(f"cutoff year {year} outside supported range")
    return int(year)


def render_alpaca_prompt(pair: InstructionPair, training: bool = True, header: bool = True) -> str:
    """Alpaca-style rendering; the response is appended only in training mode."""
    parts = [ALPACA_HEADER] if header else []
    parts.append(f"### Instruction:\n{pair.instruction}")
    if pair.input:
        parts.append(f"### Input:\n{pair.input}")
    if training:
        parts.append(f"### Response:\n{pair.response}")
    else:
        parts.append("### Response:")
    return "\n".join(parts)


def render_classifier_prompt(pair: InstructionPair, cutoff: int, include_header: bool = True) -> str:
    cutoff = check_cutoff(cutoff)
    conversation = render_alpaca_prompt(pair, training=True, header=include_header)
    return CLASSIFIER_TEMPLATE.format(year=cutoff, next_year=cutoff + 1, conversation=conversation)


def conversation_length(pair: InstructionPair) -> int:
    """Whitespace-token count of the rendered conversation."""
    return len(render_alpaca_prompt(pair).split())


_decoder = json.JSONDecoder()


def _first_json_object(raw: str) -> dict:
    for m in re.finditer(r"\{", raw):
        try:
            obj, _ = _decoder.raw_decode(raw, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise ParseError(f"no JSON object in judge output: {raw[:80]!r}")


def _as_int(value, name: str) -> int:
    if isinstance(value, bool):
        raise ParseError(f"{name} must be a number")
    if isinstance(value, str):
        value = value.strip()
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise ParseError(f"{name} is not numeric: {value!r}") from None
    if f != int(f):
        raise ParseError(f"{name} is not an integer: {value!r}")
    return int(f)


def parse_temporal_label(raw: str, pair_id: str = "", judge_model: str = "") -> TemporalLabel:
    obj = _first_json_object(raw)
    try:
        label = obj["label"]
        confidence = obj["confidence"]
    except KeyError as exc:
        raise ParseError(f"missing field {exc}") from None
    term = obj.get("suspected term", obj.get("suspected_term"))
    if term is None:
        raise ParseError("missing field 'suspected term'")
    label, confidence = _as_int(label, "label"), _as_int(confidence, "confidence")
    if label not in (0, 1):
        raise ParseError(f"label out of range: {label}")
    if not 0 <= confidence <= 10:
        raise ParseError(f"confidence out of range: {confidence}")
    term = str(term).strip()
    if not term:
        raise ParseError("suspected term is empty")
    return TemporalLabel(pair_id, label, confidence, term, judge_model)


def admit(label: TemporalLabel) -> bool:
    return label.label == 0 and label.confidence == 10


def assemble_curriculum(admitted: Iterable[InstructionPair]) -> list[InstructionPair]:
    admitted = list(admitted)
    for p in admitted:
        if p.stage not in (1, 2, 3):
            raise UnknownStage(f"pair {p.id}: stage {p.stage}")
    return sorted(admitted, key=lambda p: p.stage)


@dataclass
class FilterReport:
    total: int = 0
    admitted: int = 0
    label1: int = 0
    low_confidence: int = 0
    parse_error: int = 0
    gateway_error: int = 0
    prefiltered: int = 0
    by_source: dict = field(default_factory=dict)
    avg_length_by_stage: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def filter_corpus(
    pairs: Iterable[InstructionPair],
    cutoff: int,
    judge: ModelEndpoint,
    gateway: Gateway,
    max_in_flight: int = 4,
    prefilter: Optional[Callable[[InstructionPair], bool]] = None,
    include_header: bool = True,
) -> tuple[list[InstructionPair], list[TemporalLabel], FilterReport]:
    """Classify every pair with the judge and keep the admitted ones.

    Returns the admitted pairs (input order), the labels of every pair that
    produced one, and the report. A pair whose judge output fails to parse is
    re-queried once and then rejected.

    ``prefilter`` returns False for records to drop before classification
    (e.g. non-English or code); it is off by default.
    """
    pairs = list(pairs)
    report = FilterReport(total=len(pairs))
    params = DecodeParams(temperature=0.0, max_tokens=64)

    candidates = []
    for p in pairs:
        if prefilter is not None and not prefilter(p):
            report.prefiltered += 1
            _bump(report.by_source, p.source, "prefiltered")
            continue
        candidates.append(p)

    prompts = [render_classifier_prompt(p, cutoff, include_header) for p in candidates]
    batch = gateway.complete_batch(judge, prompts, params, max_in_flight=max_in_flight)

    admitted, labels, lengths = [], [], {}
    for i, p in enumerate(candidates):
        rec = batch.records[i]
        if rec is None:
            report.gateway_error += 1
            report.errors.append({"pair_id": p.id, "error": batch.errors[i]})
            _bump(report.by_source, p.source, "gateway_error")
            continue
        try:
            lab = parse_temporal_label(rec.text, p.id, judge.model_id)
        except ParseError:
            try:
                rec = gateway.complete(judge, prompts[i], params, salt="requery-1")
                lab = parse_temporal_label(rec.text, p.id, judge.model_id)
            except (ParseError, GatewayError) as exc:
                logger.info("rejecting %s after re-query: %s", p.id, exc)
                report.parse_error += 1
                report.errors.append({"pair_id": p.id, "error": f"{type(exc).__name__}: {exc}"})
                _bump(report.by_source, p.source, "parse_error")
                continue
        labels.append(lab)
        if admit(lab):
            admitted.append(p)
            report.admitted += 1
            _bump(report.by_source, p.source, "admitted")
            lengths.setdefault(p.stage, []).append(conversation_length(p))
        elif lab.label == 1:
            report.label1 += 1
            _bump(report.by_source, p.source, "label1")
        else:
            report.low_confidence += 1
            _bump(report.by_source, p.source, "low_confidence")

    report.avg_length_by_stage = {str(s): sum(v) / len(v) for s, v in sorted(lengths.items())}
    return admitted, labels, report


def _bump(table: dict, source: str, key: str):
    row = table.setdefault(source, {})
    row[key] = row.get(key, 0) + 1
