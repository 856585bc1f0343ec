"""Equal-weighted, daily-rebalanced H/L/U and long-short portfolios.

Signals dated t are paired with each firm's close-to-close return on the next
trading date; the trading calendar is the set of dates in the returns panel.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .signals import SignalRecord

TRADING_DAYS = 252
Z95 = 1.959963984540054
LEGS = ("H", "L", "U")


class EmptyJoin(ValueError):
    pass


class DegenerateSeries(ValueError):
    pass


class NonPositiveComparison(ValueError):
    pass


class MissingVintage(KeyError):
    pass


def load_returns(path) -> pd.DataFrame:
    panel = pd.read_csv(path, dtype={"firm_id": str})
    return normalize_panel(panel)


def normalize_panel(panel: pd.DataFrame) -> pd.DataFrame:
    panel = panel[["date", "firm_id", "ret"]].copy()
    panel["date"] = pd.to_datetime(panel["date"])
    panel["firm_id"] = panel["firm_id"].astype(str)
    panel["ret"] = panel["ret"].astype(float)
    if panel.duplicated(["date", "firm_id"]).any():
        raise ValueError("returns panel has duplicate (date, firm_id) rows")
    if (panel["ret"] <= -1).any():
        raise ValueError("returns must exceed -100%")
    return panel.sort_values(["date", "firm_id"], ignore_index=True)


def signals_frame(signals: Iterable[SignalRecord]) -> pd.DataFrame:
    rows = [{"date": s.date, "firm_id": s.firm_id, "signal": s.signal} for s in signals]
    df = pd.DataFrame(rows, columns=["date", "firm_id", "signal"])
    df["date"] = pd.to_datetime(df["date"])
    df["firm_id"] = df["firm_id"].astype(str)
    return df


def join_signals_returns(signals, panel: pd.DataFrame) -> tuple[pd.DataFrame, dict]:
    """Attach to each signal the firm's return on the next trading date.

    Returns the joined frame (``date``, ``firm_id``, ``signal``, ``ret_date``,
    ``ret``) and a coverage report. Signals without that return are dropped.
    """
    sig = signals if isinstance(signals, pd.DataFrame) else signals_frame(signals)
    panel = normalize_panel(panel)
    calendar = np.sort(panel["date"].unique())
    pos = np.searchsorted(calendar, sig["date"].to_numpy(), side="right")
    has_next = pos < len(calendar)
    sig = sig.copy()
    sig["ret_date"] = pd.NaT
    sig.loc[has_next, "ret_date"] = calendar[pos[has_next]]
    sig["ret_date"] = pd.to_datetime(sig["ret_date"])
    joined = sig.merge(
        panel.rename(columns={"date": "ret_date"}), on=["ret_date", "firm_id"], how="left"
    )
    keep = joined["ret"].notna()
    coverage = {
        "signals": int(len(sig)),
        "joined": int(keep.sum()),
        "dropped_no_next_date": int((~has_next).sum()),
        "dropped_missing_return": int((~keep).sum() - (~has_next).sum()),
    }
    joined = joined[keep].sort_values(["date", "firm_id"], ignore_index=True)
    if joined.empty:
        raise EmptyJoin("no signal could be matched to a next-day return")
    return joined, coverage


def form_daily_portfolios(joined: pd.DataFrame) -> pd.DataFrame:
    """One row per formation date with leg returns, H-L and member counts.

    A leg with no members is NaN that day; H-L exists only when both H and L do.
    """
    if joined.empty:
        raise EmptyJoin("nothing to form portfolios from")
    grouped = joined.groupby(["date", "signal"])["ret"]
    means = grouped.mean().unstack("signal")
    counts = grouped.size().unstack("signal")
    out = pd.DataFrame(index=means.index.rename("date"))
    for leg in LEGS:
        out[f"r_{leg}"] = means[leg] if leg in means else np.nan
    out["r_HL"] = out["r_H"] - out["r_L"]
    for leg in LEGS:
        out[f"n_{leg}"] = counts[leg].fillna(0).astype(int) if leg in counts else 0
    return out


@dataclass
class PortfolioStats:
    mean_ann: float
    sd_ann: float
    sharpe: float
    ci95_low: float
    ci95_high: float
    n_days: int

    def to_json(self) -> dict:
        return asdict(self)


def sharpe_ratio(mean_ann: float, sd_ann: float) -> float:
    if sd_ann <= 0:
        raise DegenerateSeries("standard deviation must be positive")
    return mean_ann / sd_ann


def annualize(daily: Sequence[float]) -> PortfolioStats:
    """Annualized mean and SD in percent, Sharpe ratio and its 95% interval.

    The interval uses the asymptotic i.i.d. standard error of the daily Sharpe
    ratio, sqrt((1 + SR_d^2 / 2) / n), scaled by sqrt(252).
    """
    x = np.asarray(pd.Series(daily, dtype=float).dropna(), dtype=float)
    n = len(x)
    if n < 2:
        raise DegenerateSeries(f"need at least 2 days, got {n}")
    mu, sd = x.mean(), x.std(ddof=1)
    if not sd > 0 or np.allclose(x, x[0], rtol=0, atol=0):
        raise DegenerateSeries("zero variance return series")
    sr_daily = mu / sd
    sharpe = sr_daily * math.sqrt(TRADING_DAYS)
    se = math.sqrt((1 + sr_daily**2 / 2) / n) * math.sqrt(TRADING_DAYS)
    return PortfolioStats(
        mean_ann=mu * TRADING_DAYS * 100,
        sd_ann=sd * math.sqrt(TRADING_DAYS) * 100,
        sharpe=sharpe,
        ci95_low=sharpe - Z95 * se,
        ci95_high=sharpe + Z95 * se,
        n_days=n,
    )


def lower_bound_ratio(sr_consistent: float, sr_comparisons: Sequence[float]) -> float:
    """Share of the best comparison Sharpe ratio retained by the leak-free model."""
    sr_comparisons = list(sr_comparisons)
    if not sr_comparisons:
        raise ValueError("need at least one comparison Sharpe ratio")
    if any(s <= 0 for s in sr_comparisons):
        raise NonPositiveComparison(f"comparison Sharpe ratios must be positive: {sr_comparisons}")
    return sr_consistent / max(sr_comparisons)


@dataclass
class BacktestResult:
    daily: pd.DataFrame
    stats: dict[str, Optional[PortfolioStats]]
    coverage: dict
    notes: list[str] = field(default_factory=list)

    def stats_json(self) -> dict:
        return {
            "legs": {k: (v.to_json() if v else None) for k, v in self.stats.items()},
            "coverage": self.coverage,
            "days_with_leg": {leg: int(self.daily[f"r_{leg}"].notna().sum()) for leg in LEGS},
            "days_with_HL": int(self.daily["r_HL"].notna().sum()),
            "notes": self.notes,
        }


def backtest(signals, panel: pd.DataFrame) -> BacktestResult:
    joined, coverage = join_signals_returns(signals, panel)
    daily = form_daily_portfolios(joined)
    stats: dict[str, Optional[PortfolioStats]] = {}
    notes = ["H-L uses only dates on which both the H and L legs have members",
             "a leg's statistics use only the dates on which it has members"]
    for leg, col in (("L", "r_L"), ("U", "r_U"), ("H", "r_H"), ("H-L", "r_HL")):
        try:
            stats[leg] = annualize(daily[col])
        except DegenerateSeries as exc:
            stats[leg] = None
            notes.append(f"{leg}: {exc}")
    return BacktestResult(daily, stats, coverage, notes)


def realtime_signals(by_vintage: dict[int, list[SignalRecord]]) -> list[SignalRecord]:
    """Stitch signals so each prediction year uses the vintage from the year before."""
    years = sorted({s.date.year for sigs in by_vintage.values() for s in sigs})
    out = []
    for y in years:
        if y - 1 not in by_vintage:
            raise MissingVintage(f"no vintage {y - 1} for prediction year {y}")
        out.extend(s for s in by_vintage[y - 1] if s.date.year == y)
    return out


def vintage_sweep(
    by_vintage: dict[int, list[SignalRecord]], panel: pd.DataFrame, realtime: bool = True
) -> pd.DataFrame:
    """H-L statistics per vintage, plus the realtime composite as row ``"realtime"``."""
    rows = []
    for v in sorted(by_vintage):
        st = backtest(by_vintage[v], panel).stats["H-L"]
        rows.append(_sweep_row(str(v), st))
    if realtime:
        st = backtest(realtime_signals(by_vintage), panel).stats["H-L"]
        rows.append(_sweep_row("realtime", st))
    return pd.DataFrame(rows, columns=["vintage", "sharpe", "ci_low", "ci_high", "mean_ann", "sd_ann", "n_days"])


def _sweep_row(name: str, st: Optional[PortfolioStats]) -> dict:
    if st is None:
        return {"vintage": name, "sharpe": None, "ci_low": None, "ci_high": None,
                "mean_ann": None, "sd_ann": None, "n_days": 0}
    return {"vintage": name, "sharpe": st.sharpe, "ci_low": st.ci95_low, "ci_high": st.ci95_high,
            "mean_ann": st.mean_ann, "sd_ann": st.sd_ann, "n_days": st.n_days}
