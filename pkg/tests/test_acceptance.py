"""Acceptance suite: one test per criterion, summarized at the end of the run.

Run alone with ``pytest tests/test_acceptance.py -v``; the terminal summary
lists PASS/FAIL per criterion together with the measured values.
"""
import csv
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import given, settings

from oracles import brute_force_eer, centroid_threshold_error, ref_min_tdcf_from_files
from spoofbench.dataio import (
    AudioClip,
    DatasetManifest,
    ManifestEntry,
    format_asvspoof_protocol,
    format_itw_manifest,
    load_entry,
    parse_asvspoof_protocol,
    parse_itw_manifest,
    spectral_centroid,
)
from spoofbench.features import LengthPolicy, apply_length_policy
from spoofbench.harness import cli, expand_grid, load_config
from spoofbench.harness.report import build_table, report
from spoofbench.harness.store import ResultsStore, RunKey, RunRecord
from spoofbench.metrics import (
    AggregateRow,
    AsvScores,
    EvalResult,
    ScoreRecord,
    compute_eer,
    compute_tdcf,
    feature_effect,
    read_asv_scores,
)
from spoofbench.models import MODEL_IDS, Batch, ModelConfig, build, forward, native_input_kind, \
    reference_hyperparams
from test_dataio import manifests

REPO = Path(__file__).resolve().parent.parent
FOUR_S, SIXTEEN_S = 64000, 256000


def criterion(number):
    def mark(fn):
        fn.criterion = number
        return fn
    return mark


def records(bona, spoof):
    return ([ScoreRecord(f"b{i}", float(s), "bonafide") for i, s in enumerate(bona)]
            + [ScoreRecord(f"s{i}", float(s), "spoof") for i, s in enumerate(spoof)])


def random_scores(rng, max_n=50):
    n = int(rng.integers(2, max_n + 1))
    nb = int(rng.integers(1, n))
    if rng.random() < 0.3:
        scores = rng.integers(0, 8, size=n).astype(float)
    else:
        scores = rng.normal(size=n)
    scores[:nb] += rng.uniform(0, 2)
    return scores[:nb], scores[nb:]


def published_rows():
    with open(REPO / "tests" / "fixtures" / "reference_grid_results.csv", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------

@criterion(1)
def test_criterion_01_eer_oracle(record_property):
    """EER equals the brute-force oracle on 1000 random score sets"""
    rng = np.random.default_rng(20240101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        b, s = random_scores(rng)
        worst = max(worst, abs(compute_eer(records(b, s))[0] - brute_force_eer(b, s)))
    elapsed = time.perf_counter() - start
    record_property("detail", f"max |diff| {worst:.1e}, {elapsed:.1f} s")
    assert worst < 1e-9
    assert elapsed < 10.0


@criterion(2)
def test_criterion_02_eer_edges(record_property):
    """EER edge cases and monotone-transform invariance"""
    assert compute_eer(records([0.9, 0.8, 0.7], [0.1, 0.2]))[0] == 0.0
    assert compute_eer(records([0.1, 0.2], [0.9, 0.8, 0.7]))[0] == 1.0
    rng = np.random.default_rng(2)
    for _ in range(100):
        b, s = random_scores(rng)
        base = compute_eer(records(b, s))[0]
        assert compute_eer(records(np.exp(b), np.exp(s)))[0] == base
        assert compute_eer(records(2.5 * b - 1, 2.5 * s - 1))[0] == base
        assert compute_eer(records(np.arctan(b), np.arctan(s)))[0] == base
    record_property("detail", "separated 0.0, inverted 1.0, 100 sets x 3 transforms exact")


@criterion(3)
def test_criterion_03_tdcf_reference(tmp_path, record_property):
    """min t-DCF matches the challenge reference on 20 file pairs"""
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(20):
        bona = rng.normal(1.5, 1.0, int(rng.integers(20, 80)))
        spoof = rng.normal(-1.0, 1.5, int(rng.integers(20, 80)))
        cm = tmp_path / f"cm{i}.txt"
        cm.write_text("".join(f"LA_E_b{j} - bonafide {float(v)!r}\n" for j, v in enumerate(bona))
                      + "".join(f"LA_E_s{j} A{7 + j % 13:02d} spoof {float(v)!r}\n"
                                for j, v in enumerate(spoof)))
        asv = tmp_path / f"asv{i}.txt"
        with open(asv, "w") as f:
            for key, mu, sd in (("target", 2.0, 1.0), ("nontarget", -2.0, 1.0), ("spoof", 0.5, 1.5)):
                for v in rng.normal(mu, sd, 60):
                    f.write(f"LA_00{i:02d} {key} {float(v)!r}\n")
        ours = compute_tdcf(records(bona, spoof), read_asv_scores(asv))
        worst = max(worst, abs(ours - ref_min_tdcf_from_files(cm, asv)))
    asv_scores = AsvScores(np.array([5.0, 6.0, 7.0]), np.array([-5.0, -6.0]), np.array([-4.0, 1.0]))
    perfect = compute_tdcf(records([2.0, 3.0, 4.0], [-1.0, -2.0]), asv_scores)
    flat = compute_tdcf(records(np.zeros(10), np.zeros(12)), asv_scores)
    record_property("detail", f"max |diff| {worst:.1e}, perfect {perfect}, uninformative {flat}")
    assert worst < 1e-9
    assert perfect == 0.0
    assert flat == pytest.approx(1.0, abs=1e-12)


@criterion(4)
def test_criterion_04_length_rollup(record_property):
    """Report roll-up of the published grid gives 9.85/18.89 EER and 0.22/0.39 t-DCF"""
    start = time.perf_counter()
    store = ResultsStore()
    for row in published_rows():
        key = RunKey(row["model"], row["feature"], row["length"], 0, "eval")
        store.put(RunRecord(key, "done", EvalResult(float(row["eer_mean"]) / 100, 0.0,
                                                    float(row["tdcf_mean"]))))
    assert len(store) == 56
    text = report(store, "csv")
    summary = {r[2]: r for r in csv.reader(text.splitlines()) if r and r[0] == "summary"}
    table = build_table(store)
    elapsed = time.perf_counter() - start
    full, short = summary["Full"], summary["4s"]
    record_property("detail", f"Full {full[3]} / {full[4]}, 4s {short[3]} / {short[4]}, "
                              f"{elapsed * 1000:.0f} ms")
    exact = {s["length"]: s for s in table.summary}
    assert abs(exact["full"]["eer"] - 9.85) <= 0.01
    assert abs(exact["fixed4s"]["eer"] - 18.89) <= 0.01
    assert abs(exact["full"]["tdcf"] - 0.22) <= 0.005
    assert abs(exact["fixed4s"]["tdcf"] - 0.39) <= 0.005
    assert (full[3], full[4], short[3], short[4]) == ("9.85", "0.22", "18.89", "0.39")
    assert elapsed < 1.0


@criterion(5)
def test_criterion_05_feature_effect(record_property):
    """melspec to cqtspec mean relative EER reduction lies in [30%, 42%]"""
    rows = [AggregateRow(r["model"], r["feature"], r["length"], float(r["eer_mean"]),
                         float(r["eer_std"]), float(r["tdcf_mean"]), float(r["tdcf_std"]), 3)
            for r in published_rows()]
    eff = feature_effect(rows, "melspec", "cqtspec")
    record_property("detail", f"per-pair mean {100 * eff.mean_pair_reduction:.1f}%, "
                              f"pooled {100 * eff.pooled_reduction:.1f}%, {eff.n_pairs} pairs")
    assert 0.30 <= eff.mean_pair_reduction <= 0.42


def _batch(model_id, n, length, seed=0):
    rng = np.random.default_rng(seed)
    if native_input_kind(model_id) == "raw":
        x = 0.1 * rng.standard_normal((n, 1, length))
    else:
        x = rng.standard_normal((n, 513, 1 + length // 256))
    return Batch([f"u{i}" for i in range(n)], x.astype(np.float32), [x.shape[-1]] * n,
                 np.arange(n) % 2)


@pytest.mark.slow
@criterion(6)
def test_criterion_06_model_contract(record_property):
    """All 12 detectors: deterministic build, finite logits on 4 s and 16 s, gradients reach 99%"""
    start = time.perf_counter()
    worst_grad = 1.0
    for model_id in MODEL_IDS:
        a, b = build(ModelConfig(model_id, init_seed=7)), build(ModelConfig(model_id, init_seed=7))
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb), model_id
        a.eval()
        with torch.no_grad():
            for length in (FOUR_S, SIXTEEN_S):
                logits = forward(a, _batch(model_id, 2, length))
                assert logits.shape == (2, 2), model_id
                assert torch.isfinite(logits).all(), model_id
        a.train()
        batch = _batch(model_id, 4, FOUR_S, seed=1)
        torch.nn.functional.cross_entropy(forward(a, batch),
                                          torch.from_numpy(batch.labels)).backward()
        params = list(a.parameters())
        frac = sum(p.grad is not None and bool(p.grad.abs().sum() > 0) for p in params) / len(params)
        worst_grad = min(worst_grad, frac)
        assert frac >= 0.99, (model_id, frac)
    elapsed = time.perf_counter() - start
    record_property("detail", f"min nonzero-grad fraction {worst_grad:.3f}, {elapsed:.0f} s")
    assert elapsed < 300


OVERFIT_STEPS = 200
OVERFIT_FRAMES = 32        # spectral batch 4 x 513 x 32
OVERFIT_SAMPLES = 4000     # raw batch 4 x 4000
MONOTONE_TOL = 1e-6        # float32 resolution of a loss near 1e-1


def overfit_curve(model_id):
    hp = {"dropout": 0.0} if "dropout" in reference_hyperparams(model_id) else {}
    model = build(ModelConfig(model_id, init_seed=0, hyperparams=hp)).train()
    g = torch.Generator().manual_seed(0)
    if native_input_kind(model_id) == "raw":
        x = 0.1 * torch.randn(4, OVERFIT_SAMPLES, generator=g)
    else:
        x = torch.randn(4, 513, OVERFIT_FRAMES, generator=g)
    y = torch.tensor([0, 1, 0, 1])
    opt = torch.optim.Adam(model.parameters(), lr=1e-4)
    losses = []
    for _ in range(OVERFIT_STEPS):
        opt.zero_grad()
        loss = torch.nn.functional.cross_entropy(model(x), y)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return np.array(losses)


@pytest.mark.slow
@criterion(7)
def test_criterion_07_overfit_one_batch(record_property):
    """Every detector overfits one batch: monotone after step 20, loss < 0.1 within 200 steps"""
    start = time.perf_counter()
    failures, notes = [], []
    for model_id in MODEL_IDS:
        losses = overfit_curve(model_id)
        rises = np.diff(losses[20:])
        worst = float(rises.max())
        ok = worst <= MONOTONE_TOL and losses.min() < 0.1
        notes.append(f"{model_id} {losses[-1]:.3f}/{worst:+.1e}")
        if not ok:
            failures.append(f"{model_id}: final {losses[-1]:.4f}, largest rise {worst:.2e}, "
                            f"{int((rises > MONOTONE_TOL).sum())} rises")
    elapsed = time.perf_counter() - start
    record_property("detail", f"{elapsed:.0f} s; " + ", ".join(failures or notes))
    assert not failures, failures
    assert elapsed < 900


@pytest.mark.slow
@criterion(8)
def test_criterion_08_desk_end_to_end(tmp_path, record_property):
    """synth-data -> grid -> report on the desk config, every EER < 10%"""
    start = time.perf_counter()
    data, out = tmp_path / "synthetic", tmp_path / "run"
    quiet = ["--log-level", "WARNING"]
    assert cli.main(["synth-data", "--n-clips", "200", "--out", str(data), *quiet]) == cli.EXIT_OK
    assert cli.main(["grid", "--config", str(REPO / "configs" / "desk.yaml"),
                     "--data-root", str(data), "--out", str(out), *quiet]) == cli.EXIT_OK
    assert cli.main(["report", "--out", str(out), "--format", "csv", *quiet]) == cli.EXIT_OK
    elapsed = time.perf_counter() - start

    with ResultsStore(out / "results.sqlite") as store:
        rows = store.aggregate("eval")
    assert len(rows) == 4
    eers = {f"{r.model}/{r.feature}": r.eer_mean for r in rows}

    eval_manifest = parse_asvspoof_protocol((data / "protocols" / "eval.txt").read_text(),
                                            data / "audio" / "eval", extension=".wav",
                                            split="eval")
    cents = {"bonafide": [], "spoof": []}
    for e in eval_manifest.entries:
        cents[e.label].append(spectral_centroid(load_entry(e).samples))
    oracle = centroid_threshold_error(cents["bonafide"], cents["spoof"])
    record_property("detail", ", ".join(f"{k} {v:.2f}%" for k, v in eers.items())
                    + f"; centroid oracle {100 * oracle:.1f}%; {elapsed:.0f} s")
    assert oracle <= 0.05
    assert all(v < 10.0 for v in eers.values())
    assert elapsed < 600


@criterion(9)
def test_criterion_09_length_policy(record_property):
    """10,000 random length-policy cases"""
    rng = np.random.default_rng(9)
    base = rng.uniform(-1, 1, 300000).astype(np.float32)
    start = time.perf_counter()
    for i in range(10000):
        n = int(rng.integers(1, 300000))
        mode = "fixed4s" if rng.random() < 0.5 else "full"
        policy = LengthPolicy(mode, rng_seed=int(rng.integers(0, 1000)))
        clip = AudioClip(f"utt{i}", base[:n], 16000)
        out = apply_length_policy(clip, policy)
        if mode == "fixed4s":
            assert len(out) == FOUR_S
        else:
            assert len(out) >= FOUR_S
            if n >= FOUR_S:
                assert out is clip
        if n > FOUR_S and mode == "fixed4s":
            again = apply_length_policy(clip, policy)
            assert np.array_equal(out.samples, again.samples)
    elapsed = time.perf_counter() - start
    record_property("detail", f"{elapsed:.1f} s")
    assert elapsed < 10.0


@criterion(10)
def test_criterion_10_manifests(tmp_path, record_property):
    """Manifest round trips plus golden parses of the protocol and metadata excerpts"""
    fixtures = REPO / "tests" / "fixtures"
    la = parse_asvspoof_protocol((fixtures / "asvspoof_la_protocol_excerpt.txt").read_text(),
                                 tmp_path)
    assert len(la) == 10
    assert (la.entries[0].speaker_id, la.entries[0].utt_id, la.entries[0].attack_id,
            la.entries[0].label) == ("LA_0079", "LA_T_1138215", None, "bonafide")
    assert (la.entries[1].attack_id, la.entries[1].label) == ("A01", "spoof")
    itw = parse_itw_manifest((fixtures / "itw_meta_excerpt.csv").read_text(), tmp_path)
    assert len(itw) == 8 and itw.entries[3].label == "bonafide"
    assert (itw.entries[0].utt_id, itw.entries[0].speaker_id) == ("0.wav", "Alec Guinness")

    @settings(max_examples=100, deadline=None)
    @given(manifests("asvspoof"), manifests("itw"))
    def round_trip(a, b):
        m = DatasetManifest("a", [ManifestEntry(e.utt_id, e.speaker_id, e.attack_id, e.label,
                                                os.path.join("/r", e.utt_id + ".flac"), "eval")
                                  for e in a])
        back = parse_asvspoof_protocol(format_asvspoof_protocol(m), "/r", split="eval", name="a")
        assert [(e.utt_id, e.speaker_id, e.attack_id, e.label) for e in back.entries] == \
            [(e.utt_id, e.speaker_id, e.attack_id, e.label) for e in m.entries]
        w = DatasetManifest("w", [ManifestEntry(e.utt_id, e.speaker_id, None, e.label,
                                                os.path.join("/w", e.utt_id), "itw") for e in b])
        wb = parse_itw_manifest(format_itw_manifest(w), "/w", name="w")
        assert [(e.utt_id, e.speaker_id, e.label) for e in wb.entries] == \
            [(e.utt_id, e.speaker_id, e.label) for e in w.entries]

    round_trip()
    record_property("detail", "golden excerpts parsed, 100 generated round trips")


@criterion(11)
def test_criterion_11_full_scale_runbook(record_property):
    """Full-scale runbook is documented and its grid config expands to 56 cells x 3 seeds"""
    readme = (REPO / "README.md").read_text()
    assert "Runbook" in readme and "paper_grid.yaml" in readme
    cfg = load_config(REPO / "configs" / "paper_grid.yaml", REPO)
    assert len(expand_grid(cfg.experiment)) == 56 and cfg.experiment.seeds == [0, 1, 2]
    record_property("detail", "documented; training on the real corpora is outside CI")
