import random
from pathlib import Path

import pytest

from gapdecomp.ingest import SchemaConfig, canonical_schema, load_microdata, summarize, write_records
from gapdecomp.model import ConfigError, MicroRecord, ParseError, RdSpec, SchemaError
from gapdecomp.synth import expected_counts, make_population

DATA = Path(__file__).parent / "data"
SPEC = RdSpec()
SOUTH = {"AL": "South", "TX": "South", "GA": "South", "NY": "Non-South", "CA": "Non-South"}


def race_schema(**kw):
    base = dict(outcome="insured", group="race", cell="state", running="age",
                location="state", weight="wt",
                group_coding={"White": 0, "Hispanic": 1, "Black": "exclude"},
                cell_grouping=SOUTH)
    base.update(kw)
    return SchemaConfig(**base)


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


def test_all_valid_rows(tmp_path):
    rows = [(0.5, 0, "a", 51 + i, "L1", 1.0) for i in range(5)]
    path = write_csv(tmp_path / "d.csv", ["outcome", "group", "cell", "running", "location",
                                          "weight"], rows)
    recs, report = load_microdata(path, canonical_schema(), SPEC)
    assert len(recs) == 5 and report.dropped == 0


def test_window_drop(tmp_path):
    rows = [(0.5, 0, "a", 60, "L1"), (0.5, 1, "a", 45, "L1")]
    path = write_csv(tmp_path / "d.csv", ["outcome", "group", "cell", "running", "location"],
                     rows)
    recs, report = load_microdata(path, canonical_schema(), SPEC)
    assert len(recs) == 1 and report.dropped_window == 1
    assert recs[0].weight == 1.0  # no weight column


def test_race_fixture_hand_count():
    recs, report = load_microdata(DATA / "race_fixture.csv", race_schema(), SPEC)
    # hand count: White rows at ages 60, 79, 51; Hispanic at 66, 55, 65;
    # two Black rows excluded; ages 45 and 80 fall outside the window
    assert [(r.group, r.running) for r in recs] == [(0, 60), (1, 66), (1, 55), (0, 79),
                                                    (1, 65), (0, 51)]
    assert report.dropped_excluded == 2
    assert report.dropped_window == 2
    assert report.n_rows == 10
    assert [r.cell for r in recs] == ["South", "South", "Non-South", "Non-South", "South",
                                      "South"]
    assert recs[1].weight == 2.0


def test_missing_column_named(tmp_path):
    with pytest.raises(SchemaError, match="'insured_x'"):
        load_microdata(DATA / "race_fixture.csv", race_schema(outcome="insured_x"), SPEC)


def test_unmappable_label_error_policy(tmp_path):
    schema = race_schema(cell_grouping={"AL": "South"}, missing_policy="error")
    with pytest.raises(ParseError, match="line 3"):
        load_microdata(DATA / "race_fixture.csv", schema, SPEC)
    recs, report = load_microdata(DATA / "race_fixture.csv",
                                  race_schema(cell_grouping={"AL": "South"}), SPEC)
    # every non-excluded row but the AL one is unmappable, window checked later
    assert len(recs) == 1 and report.dropped_missing == 7


def test_non_numeric_outcome(tmp_path):
    path = write_csv(tmp_path / "d.csv", ["outcome", "group", "cell", "running", "location"],
                     [(0.5, 0, "a", 60, "L"), ("yes", 0, "a", 61, "L")])
    with pytest.raises(ParseError, match="line 3"):
        load_microdata(path, canonical_schema(), SPEC)


def test_empty_outcome_dropped(tmp_path):
    path = write_csv(tmp_path / "d.csv", ["outcome", "group", "cell", "running", "location"],
                     [("", 0, "a", 60, "L"), (1, 1, "a", 61, "L")])
    recs, report = load_microdata(path, canonical_schema(), SPEC)
    assert len(recs) == 1 and report.dropped_missing == 1


def test_group_coding_needs_both_groups():
    with pytest.raises(ConfigError):
        SchemaConfig(group_coding={"a": 0, "b": "exclude"})


def test_summarize_basics():
    assert summarize([]).counts == {} and summarize([]).n_records == 0
    recs = [MicroRecord(0.0, w, x, 60, "L") for w in (0, 1) for x in ("a", "b")]
    assert set(summarize(recs).counts.values()) == {1}


def test_round_trip_and_counts(tmp_path, noiseless_dgp):
    recs = make_population(noiseless_dgp)
    path = tmp_path / "pop.csv"
    write_records(recs, path)
    back, report = load_microdata(path, canonical_schema(), SPEC)
    assert back == recs
    assert report.counts == expected_counts(noiseless_dgp)
    assert summarize(back, SPEC).counts == expected_counts(noiseless_dgp)


def test_permutation_invariant_counts(tmp_path, noiseless_dgp):
    recs = make_population(noiseless_dgp)
    shuffled = recs[:]
    random.Random(0).shuffle(shuffled)
    write_records(shuffled, tmp_path / "s.csv")
    _, report = load_microdata(tmp_path / "s.csv", canonical_schema(), SPEC)
    assert report.counts == summarize(recs, SPEC).counts
    assert report.weight_sums == pytest.approx(summarize(recs, SPEC).weight_sums)


def test_report_serializes():
    _, report = load_microdata(DATA / "race_fixture.csv", race_schema(), SPEC)
    d = report.to_dict()
    assert d["dropped"] == 4
    assert sum(s["count"] for s in d["strata"]) == 6
