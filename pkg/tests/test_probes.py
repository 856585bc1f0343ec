import pytest
from hypothesis import given, strategies as st

from chrono_eval.gateway import DecodeParams
from chrono_eval.probes import (
    ModelRow,
    ProbeSpec,
    UnknownEvent,
    build_event_probe,
    build_president_probe,
    event_suite,
    load_presidents,
    president_suite,
    realtime_vintage,
    regime,
    run_probe_grid,
    score_continuation,
    truncate_continuation,
)

from conftest import endpoint, load_table, replay_transport, vintage_endpoint

VINTAGES = range(1999, 2025)


def grid_rows():
    rows = [ModelRow(str(y), vintage_endpoint(y), y) for y in VINTAGES]
    rows.append(ModelRow("realtime", in_series=False, vintages={y: vintage_endpoint(y) for y in VINTAGES}))
    return rows


def replay(table_name, suite, make_gateway):
    table = load_table(table_name)
    gw, tr = make_gateway(transport=replay_transport(table, suite))
    return table, run_probe_grid(grid_rows(), suite, gw), tr


def test_president_prompt_layout():
    spec = president_suite()[1]
    assert spec.prompt == (
        "U.S. Presidents in chronological order:\n"
        "Took office in 1981: President Ronald Reagan\n"
        "Took office in 1989: President George H. W. Bush\n"
        "Took office in 1993: President Bill Clinton\n"
        "Took office in 2001: President"
    )
    assert spec.event_year == 2000 and spec.answer_token_budget == 2


def test_president_probe_needs_three_predecessors():
    with pytest.raises(IndexError):
        build_president_probe(load_presidents(), 2)


def test_event_probes():
    suite = event_suite()
    assert [s.event_year for s in suite] == [2001, 2003, 2008, 2016, 2020, 2022]
    assert all(s.answer_token_budget == 3 for s in suite)
    with pytest.raises(UnknownEvent):
        build_event_probe(1990)


def test_probe_spec_validation():
    with pytest.raises(ValueError):
        ProbeSpec("x", "Event", 2000, "p", ("a",), 2)
    with pytest.raises(ValueError):
        ProbeSpec("x", "Quiz", 2000, "p", ("a",), 3)
    with pytest.raises(ValueError):
        ProbeSpec("x", "Event", 2000, "p", (" ",), 3)


def test_scoring_is_case_and_space_insensitive():
    spec = president_suite()[1]
    assert score_continuation(spec, "  george   W.\n")
    assert not score_continuation(spec, "Bill Clinton")


@given(st.integers(1900, 2100), st.integers(1900, 2100))
def test_regime_boundary(event_year, cutoff):
    assert (regime(event_year, cutoff) == "PostCutoff") == (event_year > cutoff)


def test_truncation():
    assert truncate_continuation("Barack Obama was", None, 2) == "Barack Obama"
    assert truncate_continuation("Barack Obama", ["Bar", "ack", " Obama"], 2) == "Barack"


def test_realtime_vintage_is_strictly_earlier():
    assert realtime_vintage(2008, VINTAGES) == 2007
    assert realtime_vintage(1992, VINTAGES) is None


def _check_against_table(table, grid, except_rows=()):
    for y in VINTAGES:
        row = str(y)
        if row in except_rows:
            continue
        t = grid.tallies[row]
        assert [t["pre_correct"], t["pre_total"], t["post_correct"], t["post_total"]] == table["tallies"][row], row
    if not except_rows:
        s = grid.series
        assert [s["pre_correct"], s["pre_total"], s["post_correct"], s["post_total"]] == table["series"]
    t = grid.tallies["realtime"]
    assert [t["pre_correct"], t["pre_total"], t["post_correct"], t["post_total"]] == table["realtime"]["tally"]
    cells = [grid.cells.get(("realtime", p)) for p in grid.probes]
    assert [c and c.continuation for c in cells] == table["realtime"]["cells"]


def test_president_table_replay(make_gateway):
    table, grid, tr = replay("presidents_grid.json", president_suite(), make_gateway)
    _check_against_table(table, grid)
    assert grid.series == dict(pre_correct=67, pre_total=83, post_correct=0, post_total=73)
    assert all(body.get("temperature") == 0 and body["max_tokens"] == 2 for _, _, body in tr.calls)


def test_event_table_replay(make_gateway):
    table, grid, _ = replay("events_grid.json", event_suite(), make_gateway)
    _check_against_table(table, grid, except_rows=("2022",))
    # The transcribed 2022 row reads "Corporation collapse," for the Enron probe,
    # which does not contain "scandal", yet the printed row tally is 5/6. Scoring
    # the cells as printed gives 4/6 and a series of 75/80.
    assert table["tallies"]["2022"] == [5, 6, 0, 0]
    t = grid.tallies["2022"]
    assert (t["pre_correct"], t["pre_total"]) == (4, 6)
    assert not grid.cells[("2022", "event-2001")].correct
    assert grid.series == dict(pre_correct=75, pre_total=80, post_correct=0, post_total=76)


def test_grid_skips_and_unscored(make_gateway):
    suite = event_suite()[:2]
    gw, _ = make_gateway(lambda ep, p: ConnectionError("x") if "SARS" in p or "2003" in p else "Enron scandal")
    rows = [ModelRow("m", endpoint("m"), 2002)]
    grid = run_probe_grid(rows, suite, gw, skip=frozenset({("m", "event-2003")}))
    assert ("m", "event-2003") not in grid.cells
    assert grid.tallies["m"]["pre_total"] + grid.tallies["m"]["post_total"] <= 1


def test_gateway_failure_is_unscored(make_gateway):
    suite = president_suite()[:1]
    gw, _ = make_gateway(lambda ep, p: ConnectionError("down"))
    grid = run_probe_grid([ModelRow("m", endpoint("m"), 2000)], suite, gw)
    assert grid.unscored and grid.tallies["m"]["pre_total"] == 0
    assert "ERR" in grid.render_table()


def test_render_table_marks_cells(make_gateway):
    table, grid, _ = replay("presidents_grid.json", president_suite(), make_gateway)
    text = grid.render_table()
    assert text.splitlines()[-1].split()[-2:] == ["67/83", "0/73"]
    assert "*Bill Clinton" in text
    assert grid.to_json()["series"]["pre_total"] == 83
