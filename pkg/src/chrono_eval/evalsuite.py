"""Pairwise win-rate evaluation and response-token cross-entropy."""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Iterable, Optional, Sequence

import numpy as np

from .gateway import DecodeParams, Gateway, ModelEndpoint


class JudgeParseError(ValueError):
    pass


class DegenerateFit(ValueError):
    pass


class EmptySequence(ValueError):
    pass


class PositiveLogprob(ValueError):
    pass


def default_judge_template() -> str:
    return resources.files("chrono_eval.data").joinpath("judge_prompt.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class PairwiseJudgment:
    instruction_id: str
    output_a: str
    output_b: str
    winner: str  # "A" = evaluated model, "B" = reference
    judge_model: str
    presentation_order: str  # "AB" or "BA"
    raw_verdict: str = ""


_LEAD = re.compile(r"^\W*([AB])(?![A-Za-z0-9])")
_NAMED = re.compile(r"(?:response|output)\s*\(?([AB])\b", re.IGNORECASE)


def parse_verdict(text: str) -> str:
    """Which presented slot ("A" = first, "B" = second) the judge preferred."""
    m = _LEAD.match(text.strip()) or _NAMED.search(text)
    if not m:
        raise JudgeParseError(f"cannot read a verdict from {text[:60]!r}")
    return m.group(1).upper()


def _unmap(slot: str, order: str) -> str:
    if order == "AB":
        return slot
    return "B" if slot == "A" else "A"


def judge_pair(
    instruction: str,
    output_a: str,
    output_b: str,
    judge: ModelEndpoint,
    gateway: Gateway,
    order: Optional[str] = None,
    rng: Optional[np.random.Generator] = None,
    template: Optional[str] = None,
    instruction_id: str = "",
) -> PairwiseJudgment:
    """Ask the judge which of two outputs is better.

    ``output_a`` is the evaluated model's output and ``output_b`` the reference.
    The order they are shown in is ``order`` if given, else a coin from ``rng``.
    If the verdict cannot be parsed the pair is asked once more with the order
    flipped.
    """
    if not output_a or not output_b:
        raise ValueError("both outputs must be non-empty")
    if order is None:
        rng = rng if rng is not None else np.random.default_rng()
        order = "AB" if rng.random() < 0.5 else "BA"
    template = template or default_judge_template()
    params = DecodeParams(temperature=0.0, max_tokens=8)
    last = None
    for attempt_order in (order, "BA" if order == "AB" else "AB"):
        first, second = (output_a, output_b) if attempt_order == "AB" else (output_b, output_a)
        prompt = template.format(instruction=instruction, first=first, second=second)
        rec = gateway.complete(judge, prompt, params)
        try:
            slot = parse_verdict(rec.text)
        except JudgeParseError as exc:
            last = exc
            continue
        return PairwiseJudgment(instruction_id, output_a, output_b, _unmap(slot, attempt_order),
                                judge.model_id, attempt_order, rec.text)
    raise JudgeParseError(f"{instruction_id}: unparseable verdict in both orders ({last})")


def balanced_orders(n: int, rng: np.random.Generator) -> list[str]:
    """Presentation orders randomized in blocks of two, so each block shows AB once and BA once."""
    orders = []
    for _ in range((n + 1) // 2):
        orders.extend(["AB", "BA"] if rng.random() < 0.5 else ["BA", "AB"])
    return orders[:n]


def judge_many(
    items: Sequence[dict],
    judge: ModelEndpoint,
    gateway: Gateway,
    rng: np.random.Generator,
    template: Optional[str] = None,
) -> tuple[list[PairwiseJudgment], dict[str, str]]:
    """Judge ``{instruction_id, instruction, output_a, output_b}`` items.

    Returns the judgments sorted by instruction_id and an error map for the
    items that could not be judged.
    """
    orders = balanced_orders(len(items), rng)
    out, errors = [], {}
    for item, order in zip(items, orders):
        iid = str(item["instruction_id"])
        try:
            out.append(judge_pair(item["instruction"], item["output_a"], item["output_b"], judge, gateway,
                                  order=order, template=template, instruction_id=iid))
        except Exception as exc:  # noqa: BLE001 - recorded per item
            errors[iid] = f"{type(exc).__name__}: {exc}"
    out.sort(key=lambda j: j.instruction_id)
    return out, errors


@dataclass
class WinRateReport:
    n: int
    wins: int
    raw_win_rate: float
    lc_win_rate: Optional[float] = None
    lc_coef: Optional[list[float]] = None
    items: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("items")
        return d


def _length(text: str) -> int:
    return len(text.split())


def win_rate(judgments: Sequence[PairwiseJudgment], length_controlled: bool = False) -> WinRateReport:
    """Share of judgments won by output A.

    The length-controlled rate fits ``P(win) = sigmoid(b0 + b1 * z)`` where z is
    the difference in whitespace-token length (A minus B) divided by its
    standard deviation, and reports sigmoid(b0): the win probability at equal
    length.
    """
    n = len(judgments)
    if n < 1:
        raise ValueError("need at least one judgment")
    y = np.asarray([1.0 if j.winner == "A" else 0.0 for j in judgments])
    wins = int(y.sum())
    items = [{"instruction_id": j.instruction_id, "winner": j.winner, "order": j.presentation_order,
              "len_a": _length(j.output_a), "len_b": _length(j.output_b)} for j in judgments]
    report = WinRateReport(n=n, wins=wins, raw_win_rate=wins / n, items=items)
    if not length_controlled:
        return report
    if wins in (0, n):
        raise DegenerateFit("all judgments have the same winner; the logistic fit does not exist")
    diff = np.asarray([it["len_a"] - it["len_b"] for it in items], dtype=float)
    sd = diff.std()
    if sd == 0:
        # no length variation: the intercept-only MLE is the raw rate
        report.lc_win_rate = report.raw_win_rate
        report.lc_coef = [math.log(wins / (n - wins)), 0.0]
        return report
    import statsmodels.api as sm
    from statsmodels.tools.sm_exceptions import PerfectSeparationError, PerfectSeparationWarning

    z = diff / sd
    X = np.column_stack([np.ones(n), z])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", PerfectSeparationWarning)
            fit = sm.Logit(y, X).fit(disp=0)
    except (PerfectSeparationError, PerfectSeparationWarning, np.linalg.LinAlgError) as exc:
        raise DegenerateFit(f"logistic fit failed: {exc}") from exc
    b0, b1 = (float(b) for b in fit.params)
    report.lc_coef = [b0, b1]
    report.lc_win_rate = float(1.0 / (1.0 + math.exp(-b0)))
    return report


def sequence_cross_entropy(token_logprobs: Iterable[float]) -> float:
    """Mean negative log-probability of the response tokens."""
    lp = [float(v) for v in token_logprobs]
    if not lp:
        raise EmptySequence("no tokens to score")
    if any(v > 0 for v in lp):
        raise PositiveLogprob("log-probabilities must be <= 0")
    return -math.fsum(lp) / len(lp)
