"""Finite synthetic universes for checking the loss/leakage decomposition.

The evaluation population is every document dated after ``tau`` (``D_r = 1``).
Two distributions live on it:

* the ambient distribution ``P`` (default: uniform), which fixes the
  unconditional membership rate ``q_T = P(t_r = 1)``;
* the eval sampler ``E``, the distribution that evaluation documents are
  actually drawn from, with ``q_T|D = E(t_r = 1)``.

The per-document ratio ``rho(t_r) = E(t = t_r) / P(t = t_r)`` is taken at the
document's own membership value, with ``0/0 = 1``. The reference distribution
``P*`` keeps the eval sampler's shape inside each membership class but resets
the class masses to the ambient rates (it equals ``P`` whenever ``E`` is a
membership reweighting of ``P``). Then, exactly,

    E_E[loss] = E_P*[loss] - E_P*[D (1 - rho) loss]
              = true_oos_loss - leakage_term,

and the leakage term vanishes when ``rho == 1`` on the support.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np


class DegenerateUniverse(ValueError):
    pass


class LeakageContractViolation(ZeroDivisionError):
    """Eval mass on a membership class that the ambient distribution never produces."""


def squared_loss(y: float, yhat: float) -> float:
    return (y - yhat) ** 2


def zero_one_loss(y: float, yhat: float) -> float:
    return 0.0 if y == yhat else 1.0


LOSSES: dict[str, Callable[[float, float], float]] = {
    "squared": squared_loss,
    "zero_one": zero_one_loss,
}


@dataclass(frozen=True)
class UniverseDoc:
    doc_id: str
    date: int
    outcome: float
    in_pretrain: bool = False
    in_ift: bool = False


@dataclass
class LeakageUniverse:
    docs: list[UniverseDoc]
    tau: int
    eval_weights: dict[str, float]
    predictor: dict[str, float]
    loss: str = "squared"
    ambient_weights: Optional[dict[str, float]] = None

    def __post_init__(self):
        ids = [d.doc_id for d in self.docs]
        if len(set(ids)) != len(ids):
            raise ValueError("doc_id values must be unique")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {sorted(LOSSES)}")
        by_id = {d.doc_id: d for d in self.docs}
        for name, weights in (("eval", self.eval_weights), ("ambient", self.ambient_weights or {})):
            for k, w in weights.items():
                if k not in by_id:
                    raise ValueError(f"{name} weight for unknown doc {k!r}")
                if w < 0:
                    raise ValueError(f"{name} weight for {k!r} is negative")
                if w > 0 and by_id[k].date <= self.tau:
                    raise ValueError(f"{name} weight on {k!r}, which is not dated after tau={self.tau}")
        missing = [d.doc_id for d in self.docs if d.doc_id not in self.predictor]
        if missing:
            raise ValueError(f"no prediction for docs {missing}")

    def eval_flag(self, doc: UniverseDoc) -> bool:
        return doc.date > self.tau

    def loss_of(self, doc: UniverseDoc) -> float:
        return LOSSES[self.loss](doc.outcome, self.predictor[doc.doc_id])

    def ambient(self) -> np.ndarray:
        if self.ambient_weights is None:
            w = [1.0 if self.eval_flag(d) else 0.0 for d in self.docs]
        else:
            w = [float(self.ambient_weights.get(d.doc_id, 0.0)) for d in self.docs]
        return np.asarray(w, dtype=float)

    def eval_sampler(self) -> np.ndarray:
        return np.asarray([float(self.eval_weights.get(d.doc_id, 0.0)) for d in self.docs])

    def chronology_violations(self) -> list[str]:
        """Docs marked as trained although dated after tau."""
        return [d.doc_id for d in self.docs if (d.in_pretrain or d.in_ift) and d.date > self.tau]

    @classmethod
    def from_json(cls, spec: dict) -> "LeakageUniverse":
        docs, predictor = [], dict(spec.get("predictor", {}))
        eval_w = dict(spec.get("eval_weights", {}))
        amb_w = dict(spec["ambient_weights"]) if "ambient_weights" in spec else None
        for d in spec["docs"]:
            docs.append(UniverseDoc(
                doc_id=str(d["doc_id"]),
                date=int(d["date"]),
                outcome=float(d["outcome"]),
                in_pretrain=bool(d.get("in_pretrain", False)),
                in_ift=bool(d.get("in_ift", False)),
            ))
            if "prediction" in d:
                predictor[str(d["doc_id"])] = float(d["prediction"])
            if "eval_weight" in d:
                eval_w[str(d["doc_id"])] = float(d["eval_weight"])
            if "ambient_weight" in d:
                amb_w = amb_w or {}
                amb_w[str(d["doc_id"])] = float(d["ambient_weight"])
        return cls(docs, int(spec["tau"]), eval_w, predictor, spec.get("loss", "squared"), amb_w)

    @classmethod
    def load(cls, path: str | Path) -> "LeakageUniverse":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def membership_indicator(doc: UniverseDoc) -> bool:
    return max(doc.in_pretrain, doc.in_ift)


def _normalized(w: np.ndarray, what: str) -> np.ndarray:
    total = w.sum()
    if total <= 0:
        raise DegenerateUniverse(f"{what} distribution has zero mass")
    return w / total


def _class_rate(probs: np.ndarray, member: np.ndarray) -> float:
    return float(probs[member].sum())


def _ratio(num: float, den: float) -> float:
    if den == 0:
        if num == 0:
            return 1.0
        raise LeakageContractViolation(
            f"eval probability {num:g} on a membership class with zero ambient probability"
        )
    return num / den


def _members(universe: LeakageUniverse, stage: str = "combined") -> np.ndarray:
    if stage == "pre":
        flags = [d.in_pretrain for d in universe.docs]
    elif stage == "ift":
        flags = [d.in_ift for d in universe.docs]
    else:
        flags = [membership_indicator(d) for d in universe.docs]
    return np.asarray(flags, dtype=bool)


def compute_q(universe: LeakageUniverse, stage: str = "combined") -> tuple[float, float]:
    """(q_T, q_T|D): membership probability under the ambient and eval distributions."""
    if not universe.docs:
        raise DegenerateUniverse("universe has no documents")
    member = _members(universe, stage)
    p = _normalized(universe.ambient(), "ambient")
    e = _normalized(universe.eval_sampler(), "eval")
    return _class_rate(p, member), _class_rate(e, member)


@dataclass
class LeakageReport:
    q_T: float
    q_T_given_D: float
    true_oos_loss: float
    leakage_term: float
    expected_empirical_loss: float
    empirical_loss_mean: Optional[float] = None
    mc_samples: int = 0
    mc_stderr: Optional[float] = None
    stagewise_sufficient: Optional[bool] = None
    terms: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def brute_force_decomposition(universe: LeakageUniverse) -> LeakageReport:
    """Exact enumeration of the true-loss / leakage split.

    ``terms`` lists, per document, its reference mass, ratio, loss, and its
    contributions to the true loss and to the leakage term.
    """
    member = _members(universe)
    p = _normalized(universe.ambient(), "ambient")
    e = _normalized(universe.eval_sampler(), "eval")
    p1, e1 = _class_rate(p, member), _class_rate(e, member)
    p0, e0 = _class_rate(p, ~member), _class_rate(e, ~member)
    rho = {True: _ratio(e1, p1), False: _ratio(e0, p0)}
    class_p = {True: p1, False: p0}
    class_e = {True: e1, False: e0}

    terms = []
    true_loss = 0.0
    leakage = 0.0
    for i, doc in enumerate(universe.docs):
        t = bool(member[i])
        if class_e[t] > 0:
            within = e[i] / class_e[t]
        elif class_p[t] > 0:
            within = p[i] / class_p[t]
        else:
            within = 0.0
        ref = class_p[t] * within
        loss = universe.loss_of(doc)
        d = 1.0 if universe.eval_flag(doc) else 0.0
        true_part = ref * loss
        leak_part = ref * d * (1.0 - rho[t]) * loss
        true_loss += true_part
        leakage += leak_part
        terms.append({
            "doc_id": doc.doc_id, "t": int(t), "D": int(d), "ref_mass": ref,
            "ratio": rho[t], "loss": loss, "true_part": true_part, "leakage_part": leak_part,
        })
    return LeakageReport(
        q_T=p1,
        q_T_given_D=e1,
        true_oos_loss=true_loss,
        leakage_term=leakage,
        expected_empirical_loss=true_loss - leakage,
        terms=terms,
    )


def monte_carlo_loss(universe: LeakageUniverse, n: int, seed: int) -> tuple[float, float]:
    """Mean loss over ``n`` i.i.d. draws from the eval sampler, with its standard error."""
    if n < 1:
        raise ValueError("n must be >= 1")
    e = _normalized(universe.eval_sampler(), "eval")
    losses = np.asarray([universe.loss_of(d) for d in universe.docs])
    rng = np.random.default_rng(seed)
    draws = losses[rng.choice(len(losses), size=n, p=e)]
    mean = float(draws.mean())
    stderr = float(draws.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, stderr


def stagewise_sufficiency_check(universe: LeakageUniverse, tol: float = 1e-12) -> bool:
    """Membership independence for pretraining and IFT separately.

    The union argument needs the two stage events to be disjoint, so a document
    carrying probability mass that is in both stages fails the check. A stage
    with zero probability on both sides (0/0) passes.
    """
    support = (universe.ambient() > 0) | (universe.eval_sampler() > 0)
    for d, s in zip(universe.docs, support):
        if s and d.in_pretrain and d.in_ift:
            return False
    for stage in ("pre", "ift"):
        q, q_d = compute_q(universe, stage)
        if q == 0:
            if q_d != 0:
                return False
        elif abs(q_d / q - 1.0) > tol:
            return False
    return True


def simulate(universe: LeakageUniverse, n: int, seed: int) -> LeakageReport:
    report = brute_force_decomposition(universe)
    report.empirical_loss_mean, report.mc_stderr = monte_carlo_loss(universe, n, seed)
    report.mc_samples = n
    report.stagewise_sufficient = stagewise_sufficiency_check(universe)
    return report
