import numpy as np
import pytest

from oracles import (
    REFERENCE_COST_MODEL,
    brute_force_eer,
    ref_compute_eer,
    ref_min_tdcf_from_files,
)
from spoofbench.errors import (
    DegenerateCosts,
    EmptyGroup,
    MalformedLine,
    MissingAsvClass,
    NoMatchedPairs,
    SingleClassInput,
)
from spoofbench.metrics import (
    AggregateRow,
    AsvScores,
    EvalResult,
    ScoreRecord,
    TdcfCosts,
    aggregate,
    aggregate_all,
    asv_eer_threshold,
    compute_eer,
    compute_tdcf,
    feature_effect,
    read_asv_scores,
    read_cm_scores,
    write_asv_scores,
    write_cm_scores,
)


def records(bona, spoof):
    return ([ScoreRecord(f"b{i}", float(s), "bonafide") for i, s in enumerate(bona)]
            + [ScoreRecord(f"s{i}", float(s), "spoof") for i, s in enumerate(spoof)])


def random_set(rng, max_n=50, ties=False):
    n = int(rng.integers(2, max_n + 1))
    nb = int(rng.integers(1, n))
    if ties:
        scores = rng.integers(0, 6, size=n).astype(float)
    else:
        scores = rng.normal(size=n)
    scores[:nb] += rng.uniform(0, 2)
    return scores[:nb], scores[nb:]


# -- EER ---------------------------------------------------------------------

def test_eer_examples():
    assert compute_eer(records([0.9, 0.8], [0.1, 0.2]))[0] == 0.0
    assert compute_eer(records([0.1, 0.2], [0.9, 0.8]))[0] == 1.0
    assert compute_eer(records([0.6, 0.4], [0.5, 0.3]))[0] == pytest.approx(0.5)


def test_eer_single_class():
    with pytest.raises(SingleClassInput):
        compute_eer(records([0.1, 0.2], []))


@pytest.mark.parametrize("ties", [False, True])
def test_eer_matches_brute_force(ties):
    rng = np.random.default_rng(42 + ties)
    for _ in range(300):
        b, s = random_set(rng, ties=ties)
        assert abs(compute_eer(records(b, s))[0] - brute_force_eer(b, s)) < 1e-9


def test_eer_threshold_realizes_crossing():
    rng = np.random.default_rng(0)
    for _ in range(50):
        b, s = random_set(rng)
        eer, thr = compute_eer(records(b, s))
        assert b.min() - 1 <= thr <= max(b.max(), s.max()) + 1


def test_eer_monotone_transform_invariance():
    rng = np.random.default_rng(1)
    for _ in range(100):
        b, s = random_set(rng)
        base = compute_eer(records(b, s))[0]
        assert compute_eer(records(np.exp(b), np.exp(s)))[0] == base
        assert compute_eer(records(3 * b + 7, 3 * s + 7))[0] == base


def test_eer_label_flip_complement():
    rng = np.random.default_rng(2)
    for _ in range(100):
        b, s = random_set(rng)
        eer = compute_eer(records(b, s))[0]
        flipped = compute_eer(records(s, b))[0]
        assert flipped == pytest.approx(1 - eer, abs=1e-12)
        assert flipped == pytest.approx(brute_force_eer(s, b), abs=1e-9)


def test_eer_duplication_invariance():
    rng = np.random.default_rng(3)
    for _ in range(50):
        b, s = random_set(rng)
        eer = compute_eer(records(b, s))[0]
        assert compute_eer(records(np.repeat(b, 2), np.repeat(s, 2)))[0] == pytest.approx(eer)


def test_non_finite_score_rejected():
    with pytest.raises(ValueError):
        ScoreRecord("x", float("nan"), "spoof")


# -- t-DCF ---------------------------------------------------------------------

def _asv(rng, n=60):
    return AsvScores(rng.normal(2.0, 1.0, n), rng.normal(-2.0, 1.0, n),
                     rng.normal(0.5, 1.5, n))


def _write_ref_files(tmp_path, i, bona, spoof, asv):
    cm = tmp_path / f"cm{i}.txt"
    with open(cm, "w") as f:
        for j, v in enumerate(bona):
            f.write(f"LA_E_b{j} - bonafide {float(v)!r}\n")
        for j, v in enumerate(spoof):
            f.write(f"LA_E_s{j} A{7 + j % 13:02d} spoof {float(v)!r}\n")
    asv_file = tmp_path / f"asv{i}.txt"
    with open(asv_file, "w") as f:
        for key in ("target", "nontarget", "spoof"):
            for v in getattr(asv, key):
                f.write(f"LA_00{i} {key} {float(v)!r}\n")
    return cm, asv_file


def test_tdcf_matches_reference_script(tmp_path):
    rng = np.random.default_rng(7)
    for i in range(20):
        bona = rng.normal(1.0, 1.0, int(rng.integers(10, 60)))
        spoof = rng.normal(-1.0, 1.5, int(rng.integers(10, 60)))
        asv = _asv(rng)
        cm_file, asv_file = _write_ref_files(tmp_path, i, bona, spoof, asv)
        ours = compute_tdcf(records(bona, spoof), read_asv_scores(asv_file))
        assert abs(ours - ref_min_tdcf_from_files(cm_file, asv_file)) < 1e-9


def test_tdcf_with_ties_matches_reference(tmp_path):
    rng = np.random.default_rng(8)
    for i in range(10):
        bona = rng.integers(0, 5, 30).astype(float) + 1
        spoof = rng.integers(0, 5, 30).astype(float)
        asv = AsvScores(rng.integers(0, 4, 40).astype(float) + 1,
                        rng.integers(0, 4, 40).astype(float) - 1,
                        rng.integers(0, 4, 40).astype(float))
        cm_file, asv_file = _write_ref_files(tmp_path, i, bona, spoof, asv)
        ours = compute_tdcf(records(bona, spoof), asv)
        assert abs(ours - ref_min_tdcf_from_files(cm_file, asv_file)) < 1e-9


def test_asv_threshold_matches_reference():
    rng = np.random.default_rng(9)
    for _ in range(30):
        t, n = rng.normal(1, 1, 40), rng.normal(-1, 1, 35)
        assert asv_eer_threshold(t, n) == ref_compute_eer(t, n)[1]


def test_default_costs_pinned():
    c = TdcfCosts()
    assert (c.p_target, c.p_nontarget, c.p_spoof) == pytest.approx(
        (REFERENCE_COST_MODEL["Ptar"], REFERENCE_COST_MODEL["Pnon"], REFERENCE_COST_MODEL["Pspoof"]),
        abs=1e-15)
    assert (c.c_miss_asv, c.c_fa_asv, c.c_miss_cm, c.c_fa_cm) == (1, 10, 1, 10)


def test_tdcf_perfect_system_is_zero():
    asv = AsvScores(np.array([5.0, 6.0, 7.0]), np.array([-5.0, -6.0]), np.array([-4.0, -3.0]))
    assert compute_tdcf(records([2.0, 3.0], [-1.0, -2.0]), asv) == 0.0


def test_tdcf_uninformative_cm_is_one():
    rng = np.random.default_rng(10)
    for _ in range(10):
        asv = _asv(rng)
        assert compute_tdcf(records(np.zeros(20), np.zeros(30)), asv) == pytest.approx(1.0)


def test_tdcf_range_property():
    rng = np.random.default_rng(11)
    for _ in range(100):
        b, s = random_set(rng)
        v = compute_tdcf(records(b, s), _asv(rng, 30))
        assert 0.0 <= v <= 1.0 + 1e-12


def test_tdcf_errors():
    asv = AsvScores(np.array([1.0]), np.array([]), np.array([0.0]))
    with pytest.raises(MissingAsvClass):
        compute_tdcf(records([1.0], [0.0]), asv)
    with pytest.raises(DegenerateCosts):
        TdcfCosts(p_target=0.5, p_nontarget=0.5, p_spoof=0.5)
    # an ASV miss cost this large drives the CM miss weight negative
    asv = AsvScores(np.array([-10.0, -11.0]), np.array([10.0, 11.0]), np.array([0.0]))
    with pytest.raises(DegenerateCosts):
        compute_tdcf(records([1.0, 2.0], [0.0, -1.0]), asv, TdcfCosts(c_miss_asv=100.0))


# -- score files ---------------------------------------------------------------

def test_cm_score_file_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(12)
    scores = [(f"u{i}", float(v)) for i, v in enumerate(rng.normal(size=100))]
    write_cm_scores(tmp_path / "s.txt", scores)
    assert read_cm_scores(tmp_path / "s.txt") == dict(scores)


def test_cm_score_file_malformed(tmp_path):
    (tmp_path / "bad.txt").write_text("u1 0.5\nu2\n")
    with pytest.raises(MalformedLine):
        read_cm_scores(tmp_path / "bad.txt")


def test_asv_score_formats(tmp_path):
    asv = AsvScores(np.array([1.5, 2.0]), np.array([-1.0]), np.array([0.25]))
    write_asv_scores(tmp_path / "a.txt", asv)
    back = read_asv_scores(tmp_path / "a.txt")
    for key in ("target", "nontarget", "spoof"):
        np.testing.assert_array_equal(getattr(back, key), getattr(asv, key))
    (tmp_path / "b.txt").write_text("LA_0001 target 1.5\nLA_0001 nontarget -1\nLA_0002 spoof 0.25\n")
    three = read_asv_scores(tmp_path / "b.txt")
    np.testing.assert_array_equal(three.target, [1.5])
    (tmp_path / "c.txt").write_text("1.0 impostor\n")
    with pytest.raises(MalformedLine):
        read_asv_scores(tmp_path / "c.txt")


# -- aggregation -----------------------------------------------------------------

def test_aggregate_example():
    row = aggregate([EvalResult(0.060, 0.0), EvalResult(0.067, 0.0), EvalResult(0.064, 0.0)],
                    ("LCNN", "cqtspec", "full"))
    assert row.eer_mean == pytest.approx(6.3667, abs=1e-4)
    assert row.eer_std == pytest.approx(0.2867, abs=1e-4)
    assert f"{row.eer_mean:.2f}±{row.eer_std:.2f}" == "6.37±0.29"
    assert row.tdcf_mean is None and row.n_runs == 3


def test_aggregate_single_and_empty():
    row = aggregate([EvalResult(0.1, 0.0, 0.3)], ("M", "f", "full"))
    assert row.eer_std == 0.0 and row.tdcf_std == 0.0 and row.tdcf_mean == 0.3
    with pytest.raises(EmptyGroup):
        aggregate([], ("M", "f", "full"))


def test_aggregate_all_groups():
    rows = aggregate_all([(("A", "x", "full"), EvalResult(0.1, 0)),
                          (("A", "x", "full"), EvalResult(0.3, 0)),
                          (("B", "x", "full"), EvalResult(0.2, 0))])
    assert [(r.model, r.n_runs) for r in rows] == [("A", 2), ("B", 1)]
    assert rows[0].eer_mean == pytest.approx(20.0)


def test_feature_effect():
    rows = [AggregateRow("A", "melspec", "full", 10.0, 0, None, None, 1),
            AggregateRow("A", "cqtspec", "full", 5.0, 0, None, None, 1),
            AggregateRow("B", "melspec", "full", 30.0, 0, None, None, 1),
            AggregateRow("B", "cqtspec", "full", 30.0, 0, None, None, 1),
            AggregateRow("C", "melspec", "full", 1.0, 0, None, None, 1)]
    eff = feature_effect(rows, "melspec", "cqtspec")
    assert eff.n_pairs == 2
    assert eff.mean_pair_reduction == pytest.approx(0.25)
    assert eff.pooled_reduction == pytest.approx(5.0 / 40.0)
    with pytest.raises(NoMatchedPairs):
        feature_effect(rows, "melspec", "raw")
