"""Score transcribed probe continuations and print the accuracy grids.

Reads the per-vintage continuations stored under tests/fixtures and runs them
through the same grid used for live models, so the tallies can be compared
with the published ones.
"""

import argparse
import json
import os
import tempfile
from pathlib import Path

from chrono_eval.gateway import Gateway, ModelEndpoint
from chrono_eval.probes import ModelRow, event_suite, president_suite, run_probe_grid

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def replay(table: dict, suite) -> str:
    by_prompt = {spec.prompt: i for i, spec in enumerate(suite)}

    def transport(endpoint, path, body, api_key):
        year = endpoint.model_id.rsplit("-", 1)[1]
        return {"choices": [{"text": table["rows"][year][by_prompt[body["prompt"]]]}]}

    # nothing leaves the process, but the gateway still insists on a credential
    os.environ.setdefault("CHRONO_REPLAY_KEY", "unused")

    def ep(y):
        return ModelEndpoint("http://replay.invalid", f"vintage-{y}", api_key_env="CHRONO_REPLAY_KEY",
                             interface="completion")

    years = sorted(int(y) for y in table["rows"])
    rows = [ModelRow("Realtime", in_series=False, vintages={y: ep(y) for y in years})]
    rows += [ModelRow(str(y), ep(y), y) for y in years]
    with tempfile.TemporaryDirectory() as cache:
        grid = run_probe_grid(rows, suite, Gateway(cache, transport=transport))
    return grid.render_table()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--suite", choices=("presidents", "events", "both"), default="both")
    args = ap.parse_args()
    jobs = {"presidents": ("presidents_grid.json", president_suite),
            "events": ("events_grid.json", event_suite)}
    for name, (fixture, suite) in jobs.items():
        if args.suite in (name, "both"):
            table = json.loads((FIXTURES / fixture).read_text(encoding="utf-8"))
            print(f"== {name} ==")
            print(replay(table, suite()))
            print()


if __name__ == "__main__":
    main()
