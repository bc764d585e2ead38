import itertools
import json
import random

import pytest
from hypothesis import given, strategies as st

from medlinker.errors import EmptyRelevantSet, MalformedRecord
from medlinker.evaluation import (
    Level,
    Qrels,
    RunEntry,
    average_precision,
    coder_agreement,
    mean_average_precision,
    per_group_map,
    read_qrels,
    read_run,
    symmetric_agreement,
    write_qrels,
    write_report,
    write_run,
)
from medlinker.terminology import parse_code

from ap_oracle import oracle_ap

A, B, C = parse_code("K02.0"), parse_code("K02.1"), parse_code("K02.2")


def run_of(*codes):
    return [RunEntry(parse_code(c) if isinstance(c, str) else c, r, 1.0 / r) for r, c in enumerate(codes, 1)]


def test_ap_examples():
    assert average_precision([A], {A}) == 1.0
    assert average_precision([B, A], {A}) == 0.5
    assert average_precision([A, B, C], {A, C}) == pytest.approx((1 / 1 + 2 / 3) / 2, abs=1e-15)
    assert average_precision([], {A}) == 0.0


def test_ap_errors():
    with pytest.raises(EmptyRelevantSet):
        average_precision([A], set())
    with pytest.raises(ValueError):
        average_precision([A, A], {A})


def test_ap_matches_oracle_exhaustively():
    for ranking in itertools.permutations([A, B, C]):
        for r in range(4):
            for relevant in map(set, itertools.combinations([A, B, C], r)):
                expected = oracle_ap(list(ranking), relevant)
                if expected is None:
                    with pytest.raises(EmptyRelevantSet):
                        average_precision(list(ranking), relevant)
                else:
                    assert average_precision(list(ranking), relevant) == pytest.approx(expected, abs=1e-12)


pool = [parse_code(c) for c in ["A00", "A00.1", "K02.2", "K02.9", "E11.9", "E10.9", "I10", "J45.9"]]


@given(st.permutations(pool).flatmap(lambda p: st.tuples(st.just(p), st.integers(0, len(p)))),
       st.sets(st.sampled_from(pool), min_size=1))
def test_ap_properties(perm_cut, relevant):
    perm, cut = perm_cut
    ranked = list(perm[:cut])
    ap = average_precision(ranked, relevant)
    assert 0.0 <= ap <= 1.0
    assert ap == pytest.approx(oracle_ap(ranked, relevant), abs=1e-12)
    perfect = all(c in ranked for c in relevant) and all(
        ranked.index(r) < ranked.index(n) for r in relevant for n in ranked if n not in relevant
    )
    assert (ap == pytest.approx(1.0)) == perfect
    # non-relevant codes appended after the last relevant one change nothing
    tail = [c for c in pool if c not in ranked and c not in relevant]
    assert average_precision(ranked + tail, relevant) == ap


def test_map_perfect_run():
    qrels = Qrels({"1": {A}, "2": {B}, "3": {C}})
    run = {"1": run_of(A), "2": run_of(B), "3": run_of(C)}
    report = mean_average_precision(run, qrels, Level.SUBCATEGORY)
    assert report.map == 1.0
    assert report.query_count == 3


def test_map_missing_id_scores_zero():
    qrels = Qrels({"1": {A}, "2": {B}, "3": {C}})
    run = {"1": run_of(A), "2": run_of(B)}
    report = mean_average_precision(run, qrels, "subcategory")
    assert report.per_query["3"] == 0.0
    assert report.map == pytest.approx(2 / 3)


def test_map_ignores_run_ids_outside_qrels():
    qrels = Qrels({"1": {A}})
    assert mean_average_precision({"1": run_of(A), "x": run_of(B)}, qrels, Level.SUBCATEGORY).map == 1.0


def test_run_ordered_by_rank_not_score():
    qrels = Qrels({"1": {B}})
    run = {"1": [RunEntry(B, 2, 9.0), RunEntry(A, 1, 0.1)]}
    assert mean_average_precision(run, qrels, Level.SUBCATEGORY).map == 0.5


def test_category_level_truncates_and_dedups():
    qrels = Qrels({"1": {parse_code("K02.2"), parse_code("E11.9")}})
    run = {"1": run_of("K02.9", "K02.2", "E10.9")}
    sub = mean_average_precision(run, qrels, Level.SUBCATEGORY)
    cat = mean_average_precision(run, qrels, Level.CATEGORY)
    # subcategory: K02.2 at rank 2 only -> (1/2) / 2
    assert sub.map == pytest.approx(0.25)
    # category: K02, E10 -> K02 at rank 1 only -> 1 / 2
    assert cat.map == pytest.approx(0.5)


def test_single_gold_category_never_below_subcategory_brute_force():
    codes = [parse_code(c) for c in ["K02.1", "K02.2", "E11.9"]]
    for gold in codes:
        for n in range(4):
            for ranking in itertools.permutations(codes, n):
                qrels = Qrels({"q": {gold}})
                run = {"q": run_of(*ranking)}
                sub = mean_average_precision(run, qrels, Level.SUBCATEGORY).map
                cat = mean_average_precision(run, qrels, Level.CATEGORY).map
                assert cat >= sub


@given(st.dictionaries(st.text(min_size=1, max_size=4), st.tuples(st.sampled_from(pool), st.lists(st.sampled_from(pool), unique=True)),
                       min_size=1, max_size=6), st.randoms())
def test_map_invariant_under_id_renaming(data, rnd):
    qrels = Qrels({qid: {gold} for qid, (gold, _) in data.items()})
    run = {qid: run_of(*ranked) for qid, (_, ranked) in data.items()}
    ids = list(data)
    renamed = ids[:]
    rnd.shuffle(renamed)
    mapping = {old: f"r{new}" for old, new in zip(ids, renamed)}
    qrels2 = Qrels({mapping[q]: g for q, g in qrels.gold.items()})
    run2 = {mapping[q]: r for q, r in run.items()}
    for level in Level:
        a = mean_average_precision(run, qrels, level).map
        b = mean_average_precision(run2, qrels2, level).map
        assert a == pytest.approx(b, abs=1e-12)


def test_per_group():
    qrels = Qrels({"1": {A}, "2": {B}, "3": {C}, "4": {A}},
                  groups={"1": "Odontología", "2": "Odontología", "3": "Neurología", "9": "Pediatría"})
    run = {"1": run_of(A), "2": run_of(B), "3": run_of(A, C)}
    report = mean_average_precision(run, qrels, Level.SUBCATEGORY)
    assert report.per_group == {"Odontología": 1.0, "Neurología": 0.5, "UNSPECIFIED": 0.0}
    assert "Pediatría" not in report.per_group


def test_per_group_single_group_equals_overall():
    per_query = {"1": 1.0, "2": 0.5, "3": 0.25}
    assert per_group_map(per_query, {q: "g" for q in per_query}) == {"g": pytest.approx(1.75 / 3)}
    assert per_group_map(per_query, {}) == {"UNSPECIFIED": pytest.approx(1.75 / 3)}


def test_agreement_identities():
    x = Qrels({"1": {A, B}, "2": {C}})
    assert coder_agreement(x, x, Level.SUBCATEGORY) == 1.0
    assert coder_agreement(x, x, Level.CATEGORY) == 1.0
    y = Qrels({"1": {parse_code("E11.9")}, "2": {parse_code("I10")}})
    assert coder_agreement(x, y, Level.SUBCATEGORY) == 0.0
    assert coder_agreement(x, y, Level.CATEGORY) == 0.0


def test_agreement_truncation_fixture():
    a = Qrels({str(i): {parse_code("K02.2")} for i in range(3)})
    b = Qrels({str(i): {parse_code("K02.9")} for i in range(3)})
    assert coder_agreement(a, b, Level.SUBCATEGORY) == 0.0
    assert coder_agreement(a, b, Level.CATEGORY) == 1.0


def test_agreement_missing_ids_and_symmetry():
    a = Qrels({"1": {A}, "2": {B}})
    b = Qrels({"1": {A}, "3": {C}})
    assert coder_agreement(a, b, Level.SUBCATEGORY) == pytest.approx(1 / 3)
    c = Qrels({"1": {A, B}})
    d = Qrels({"1": {B}})
    assert coder_agreement(c, d, Level.SUBCATEGORY) == 0.5
    assert coder_agreement(d, c, Level.SUBCATEGORY) == 0.5
    assert symmetric_agreement(c, d, Level.SUBCATEGORY) == 0.5


def test_trec_file_roundtrip(tmp_path):
    qrels = Qrels({"10": {A, C}, "2": {B}})
    run = {"10": run_of(C, B), "2": run_of(B)}
    write_qrels(qrels, tmp_path / "q.txt")
    write_run(run, tmp_path / "r.txt")
    assert (tmp_path / "q.txt").read_text() == "10 0 K02.0 1\n10 0 K02.2 1\n2 0 K02.1 1\n"
    assert (tmp_path / "r.txt").read_text().splitlines()[0] == "10 Q0 K02.2 1 1.000000 medlinker"
    assert read_qrels(tmp_path / "q.txt").gold == qrels.gold
    loaded = read_run(tmp_path / "r.txt")
    assert [e.code for e in loaded["10"]] == [C, B]


def test_read_groups_and_report(tmp_path):
    (tmp_path / "q.txt").write_text("1 0 K02.2 1\n2 0 E11.9 1\n3 0 I10 0\n")
    (tmp_path / "g.tsv").write_text("1\tOdontología\n")
    qrels = read_qrels(tmp_path / "q.txt", tmp_path / "g.tsv")
    assert set(qrels.gold) == {"1", "2"}
    assert qrels.group_of("1") == "Odontología"
    report = mean_average_precision({"1": run_of("K02.2")}, qrels, Level.CATEGORY)
    write_report(report, tmp_path / "rep.json")
    data = json.loads((tmp_path / "rep.json").read_text())
    assert data["map"] == 0.5
    assert data["level"] == "category"
    assert data["per_group"] == {"Odontología": 1.0, "UNSPECIFIED": 0.0}
    assert data["per_query"] == {"1": 1.0, "2": 0.0}


@pytest.mark.parametrize("content", ["1 0 K02.2\n", "1 0 XX 1\n"])
def test_bad_qrels(tmp_path, content):
    (tmp_path / "q.txt").write_text(content)
    with pytest.raises(MalformedRecord):
        read_qrels(tmp_path / "q.txt")


def test_bad_run(tmp_path):
    (tmp_path / "r.txt").write_text("1 Q0 K02.2 1 0.5 t\n1 Q0 K02.2 2 0.4 t\n")
    with pytest.raises(MalformedRecord):
        read_run(tmp_path / "r.txt")


def test_summation_order_is_fixed():
    rnd = random.Random(5)
    gold = {str(i): {pool[rnd.randrange(len(pool))]} for i in range(50)}
    run = {q: run_of(*rnd.sample(pool, 4)) for q in gold}
    a = mean_average_precision(run, Qrels(gold), Level.SUBCATEGORY).map
    b = mean_average_precision(dict(reversed(list(run.items()))), Qrels(dict(reversed(list(gold.items())))),
                               Level.SUBCATEGORY).map
    assert a == b
