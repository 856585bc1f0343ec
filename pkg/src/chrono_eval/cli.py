"""``chrono-eval`` command line entry point.

Exit codes: 0 on success, 1 on a domain error, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import re
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from . import evalsuite, leakage, portfolio, probes, signals, temporal_filter
from .config import RunConfig, RunManifest, file_digest, substream, write_atomic, write_json
from .gateway import Gateway, GatewayError

logger = logging.getLogger("chrono_eval")

SUBCOMMANDS = ("filter", "simulate-leakage", "probe", "classify", "backtest", "sweep", "winrate", "report")


class DomainError(Exception):
    pass


def _read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in rows)


class Run:
    """Shared state of one subcommand invocation."""

    def __init__(self, args, out_dir):
        self.args = args
        self.config = RunConfig.load(args.config)
        if args.cache_dir:
            self.config.cache_dir = args.cache_dir
        if args.seed is not None:
            self.config.seed = args.seed
        if args.max_in_flight:
            self.config.max_in_flight = args.max_in_flight
        self.out_dir = Path(out_dir)
        self.manifest = RunManifest(
            subcommand=args.command,
            config_digest=self.config.digest(),
            inputs={},
            started_at=datetime.now(timezone.utc).isoformat(),
        )
        self._gateway: Optional[Gateway] = None

    @property
    def gateway(self) -> Gateway:
        if self._gateway is None:
            self._gateway = Gateway(self.config.cache_dir, offline=self.args.offline)
        return self._gateway

    def input(self, name, path):
        self.manifest.inputs[name] = file_digest(path)
        return path

    def output(self, path, text: str):
        write_atomic(path, text)
        self.manifest.outputs.append(str(Path(path).name))

    def finish(self):
        if self._gateway is not None:
            self.manifest.cache_hits = self._gateway.hits
            self.manifest.cache_misses = self._gateway.misses
        self.manifest.outputs.sort()
        self.manifest.write(self.out_dir)


def cmd_filter(args) -> None:
    run = Run(args, args.out)
    judge = run.config.endpoint(args.judge)
    pairs = [temporal_filter.InstructionPair.from_json(d) for d in _read_jsonl(run.input("pairs", args.pairs))]
    admitted, labels, report = temporal_filter.filter_corpus(
        pairs, args.cutoff, judge, run.gateway, run.config.max_in_flight, include_header=not args.no_header
    )
    out = Path(args.out)
    run.output(out / "admitted.jsonl", _jsonl(p.to_json() for p in admitted))
    run.output(out / "curriculum.jsonl",
               _jsonl(p.to_json() for p in temporal_filter.assemble_curriculum(admitted)))
    run.output(out / "labels.jsonl", _jsonl(vars(lab) for lab in labels))
    write_json(out / "report.json", report.to_json())
    run.manifest.outputs.append("report.json")
    run.finish()
    print(f"admitted {report.admitted}/{report.total} pairs")


def cmd_simulate_leakage(args) -> None:
    out = Path(args.out)
    run = Run(args, out.parent)
    universe = leakage.LeakageUniverse.load(run.input("universe", args.universe))
    report = leakage.simulate(universe, args.mc_samples, run.config.seed)
    write_json(out, report.to_json())
    run.manifest.outputs.append(out.name)
    run.finish()
    print(f"true_oos_loss={report.true_oos_loss:.6g} leakage_term={report.leakage_term:.6g} "
          f"mc_mean={report.empirical_loss_mean:.6g} (stderr {report.mc_stderr:.3g})")


def _probe_rows(spec, config: RunConfig) -> tuple[list, frozenset]:
    if isinstance(spec, list):
        spec = {"rows": spec}
    rows = []
    for r in spec["rows"]:
        rows.append(probes.ModelRow(
            name=r.get("name") or str(r["endpoint"]),
            endpoint=config.endpoint(r["endpoint"]),
            cutoff=int(r["cutoff"]),
            in_series=bool(r.get("in_series", True)),
        ))
    rt = spec.get("realtime")
    if rt:
        if rt is True:
            rt = {}
        if "vintages" in rt:
            vintages = {int(y): config.endpoint(e) for y, e in rt["vintages"].items()}
        else:
            vintages = {row.cutoff: row.endpoint for row in rows if row.in_series}
        rows.insert(0, probes.ModelRow(name=rt.get("name", "Realtime"), in_series=False, vintages=vintages))
    skip = frozenset((a, b) for a, b in spec.get("skip", []))
    return rows, skip


def cmd_probe(args) -> None:
    out = Path(args.out)
    run = Run(args, out.parent)
    with open(run.input("models", args.models), encoding="utf-8") as fh:
        rows, skip = _probe_rows(json.load(fh), run.config)
    suite = probes.president_suite() if args.suite == "presidents" else probes.event_suite()
    grid = probes.run_probe_grid(rows, suite, run.gateway, skip)
    write_json(out, grid.to_json())
    run.manifest.outputs.append(out.name)
    if args.render_table:
        table = grid.render_table() + "\n"
        run.output(out.with_suffix(".txt"), table)
        print(table, end="")
    run.finish()


def cmd_classify(args) -> None:
    out = Path(args.out)
    run = Run(args, out.parent)
    model = run.config.endpoint(args.model)
    bundles = [signals.HeadlineBundle.from_json(d) for d in _read_jsonl(run.input("headlines", args.headlines))]
    sigs, quarantine = signals.classify_panel(bundles, model, run.gateway, run.config.max_in_flight)
    run.output(out, _jsonl(s.to_json() for s in sigs))
    if quarantine:
        qpath = out.with_name(out.stem + ".quarantine.jsonl")
        run.output(qpath, _jsonl(signals.bundle_to_json(b) for b in quarantine))
    run.finish()
    print(f"classified {len(sigs)} bundles, quarantined {len(quarantine)}")
    if quarantine:
        raise DomainError(f"{len(quarantine)} bundles could not be classified; see quarantine file")


def _daily_csv(daily) -> str:
    df = daily.reset_index()
    df["date"] = df["date"].dt.strftime("%Y-%m-%d")
    return df.to_csv(index=False, float_format="%.12g", lineterminator="\n")


def cmd_backtest(args) -> None:
    out = Path(args.out)
    run = Run(args, out)
    sigs = signals.read_signals(run.input("signals", args.signals))
    panel = portfolio.load_returns(run.input("returns", args.returns))
    result = portfolio.backtest(sigs, panel)
    stats = result.stats_json()
    stats["model_id"] = args.label or (sigs[0].model_id if sigs else "")
    write_json(out / "stats.json", stats)
    run.manifest.outputs.append("stats.json")
    run.output(out / "daily_series.csv", _daily_csv(result.daily))
    run.finish()
    hl = result.stats["H-L"]
    if hl:
        print(f"H-L: mean {hl.mean_ann:.2f}% sd {hl.sd_ann:.2f}% SR {hl.sharpe:.2f} "
              f"[{hl.ci95_low:.2f}, {hl.ci95_high:.2f}] over {hl.n_days} days")


def cmd_sweep(args) -> None:
    out = Path(args.out or args.signals_dir)
    run = Run(args, out)
    by_vintage = {}
    for f in sorted(Path(args.signals_dir).glob("*.jsonl")):
        m = re.search(r"(\d{4})", f.stem)
        if not m:
            continue
        by_vintage[int(m.group(1))] = signals.read_signals(run.input(f.name, f))
    if not by_vintage:
        raise DomainError(f"no vintage signal files (*YYYY*.jsonl) in {args.signals_dir}")
    panel = portfolio.load_returns(run.input("returns", args.returns))
    table = portfolio.vintage_sweep(by_vintage, panel, realtime=not args.no_realtime)
    run.output(out / "sweep.csv", table.to_csv(index=False, float_format="%.12g", lineterminator="\n"))
    run.finish()
    print(table.to_string(index=False))


def cmd_winrate(args) -> None:
    out = Path(args.out)
    run = Run(args, out)
    judge = run.config.endpoint(args.judge)
    items = _read_jsonl(run.input("pairs", args.pairs))
    template = None
    if args.template:
        template = Path(run.input("template", args.template)).read_text(encoding="utf-8")
    judgments, errors = evalsuite.judge_many(items, judge, run.gateway, substream(run.config.seed, "winrate"),
                                             template)
    report = evalsuite.win_rate(judgments, length_controlled=args.length_controlled)
    payload = report.to_json()
    payload["errors"] = errors
    write_json(out / "winrate.json", payload)
    run.manifest.outputs.append("winrate.json")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["instruction_id", "winner", "order", "len_a", "len_b"], lineterminator="\n")
    w.writeheader()
    w.writerows(report.items)
    run.output(out / "winrate_items.csv", buf.getvalue())
    run.finish()
    lc = f", LC {report.lc_win_rate:.2%}" if report.lc_win_rate is not None else ""
    print(f"win rate {report.raw_win_rate:.2%} over {report.n}{lc}")


class MissingArtifact(FileNotFoundError):
    pass


LEG_ROWS = (("L", "Unfavorable (L)"), ("U", "Unclear"), ("H", "Favorable (H)"), ("H-L", "H-L"))


def _fmt(x) -> str:
    return "" if x is None else f"{x:.2f}"


def render_report(run_dirs) -> str:
    """Table of leg statistics, models in column groups of two."""
    models = []
    sweeps = []
    for d in run_dirs:
        d = Path(d)
        stats_path = d / "stats.json"
        if not stats_path.exists():
            raise MissingArtifact(f"{d} has no stats.json")
        with open(stats_path, encoding="utf-8") as fh:
            stats = json.load(fh)
        models.append((stats.get("model_id") or d.name, stats["legs"]))
        if (d / "sweep.csv").exists():
            sweeps.append((d.name, (d / "sweep.csv").read_text(encoding="utf-8")))
    lines = []
    for i in range(0, len(models), 2):
        group = models[i:i + 2]
        head = "| |" + "|".join(f" {name} | | " for name, _ in group) + "|"
        sub = "| |" + "|".join(" Mean | SD | SR " for _ in group) + "|"
        rule = "|---|" + "|".join("---:|---:|---:" for _ in group) + "|"
        lines += [head, sub, rule]
        for key, label in LEG_ROWS:
            cells = []
            for _, legs in group:
                s = legs.get(key) or {}
                cells.append(f" {_fmt(s.get('mean_ann'))} | {_fmt(s.get('sd_ann'))} | {_fmt(s.get('sharpe'))} ")
            lines.append(f"| {label} |" + "|".join(cells) + "|")
        lines.append("")
    for name, text in sweeps:
        lines.append(f"Sharpe ratio by vintage ({name}):")
        lines.append("")
        lines.append("| vintage | SR | 95% CI |")
        lines.append("|---|---:|---|")
        for row in csv.DictReader(io.StringIO(text)):
            sr = float(row["sharpe"]) if row["sharpe"] else None
            lo = float(row["ci_low"]) if row["ci_low"] else None
            hi = float(row["ci_high"]) if row["ci_high"] else None
            lines.append(f"| {row['vintage']} | {_fmt(sr)} | [{_fmt(lo)}, {_fmt(hi)}] |")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def cmd_report(args) -> None:
    if not args.run_dirs:
        raise MissingArtifact("no run directories given")
    text = render_report(args.run_dirs)
    if args.out:
        out = Path(args.out)
        run = Run(args, out.parent)
        for d in args.run_dirs:
            run.input(Path(d).name, Path(d) / "stats.json")
        run.output(out, text)
        run.finish()
    print(text, end="")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--cache-dir", help="response cache directory (default ./.chrono-cache)")
    common.add_argument("--offline", action="store_true", help="never touch the network; cache misses fail")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--max-in-flight", type=int, help="concurrent requests")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="chrono-eval", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")

    p = sub.add_parser("filter", parents=[common], help="temporal screen of instruction pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--cutoff", type=int, required=True)
    p.add_argument("--judge", required=True, help="endpoint name in the config")
    p.add_argument("--out", required=True)
    p.add_argument("--no-header", action="store_true", help="omit the Alpaca header from the judged conversation")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("simulate-leakage", parents=[common], help="leakage decomposition on a synthetic universe")
    p.add_argument("--universe", required=True)
    p.add_argument("--mc-samples", type=int, default=100_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_leakage)

    p = sub.add_parser("probe", parents=[common], help="knowledge-cutoff probes")
    p.add_argument("--suite", choices=("presidents", "events"), required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--render-table", action="store_true")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("classify", parents=[common], help="headline classification into H/L/U")
    p.add_argument("--headlines", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("backtest", parents=[common], help="long-short portfolio statistics")
    p.add_argument("--signals", required=True)
    p.add_argument("--returns", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", help="model name shown in reports")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("sweep", parents=[common], help="H-L Sharpe ratio per vintage")
    p.add_argument("--signals-dir", required=True)
    p.add_argument("--returns", required=True)
    p.add_argument("--out")
    p.add_argument("--no-realtime", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("winrate", parents=[common], help="pairwise win rate against a reference")
    p.add_argument("--pairs", required=True)
    p.add_argument("--judge", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--template", help="judge prompt template with {instruction}, {first}, {second}")
    p.add_argument("--length-controlled", action="store_true")
    p.set_defaults(func=cmd_winrate)

    p = sub.add_parser("report", parents=[common], help="consolidated portfolio table")
    p.add_argument("run_dirs", nargs="*")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


DOMAIN_ERRORS = (DomainError, GatewayError, ValueError, KeyError, FileNotFoundError, ZeroDivisionError)


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DOMAIN_ERRORS as exc:
        print(f"chrono-eval {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
