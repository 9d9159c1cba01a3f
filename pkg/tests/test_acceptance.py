"""Acceptance criteria 1-10, one recorded PASS/FAIL line each.

The line is recorded before the assertion so a failing criterion still shows
its measured value in the terminal summary.
"""
import os
import statistics
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from specreplay.audio import SynthConfig, synthesize_corpus
from specreplay.features import FeatureConfig, stft
from specreplay.ivector import BwStats, GmmModel, TVMatrix, extract_ivector, train_tv, train_ubm
from specreplay.metrics import (
    CELLS, TdcfParams, breakdown_report, compute_eer, compute_min_tdcf, fuse_scores,
    parse_scores,
)
from specreplay.models import SpecCnnGruConfig, build_spec_cnngru
from specreplay.pipeline import desk_config, train_system

from .gradsuite import run_suite
from .oracles import brute_eer, brute_min_tdcf, naive_stft
from .test_ivector import planted_stats, unit_ubm

# Harder-than-default replay chain: spoofs keep most of the band, so the
# channel cue is not trivially separable and the trend comparisons are informative.
TREND_CORPUS = {
    "replay_lowpass_cutoff": {"A": 7900, "B": 7600, "C": 7000},
    "noise_snr_db": 20,
    "distance_wet": {"A": 0.05, "B": 0.1, "C": 0.2},
    "distance_gain": {"A": 0.9, "B": 0.75, "C": 0.6},
}
SEEDS = (0, 1, 2)


def trend_corpus(n_train, n_dev):
    train, _ = synthesize_corpus(SynthConfig.from_dict({"n_utts_per_class": n_train, "rng_seed": 11, **TREND_CORPUS}))
    dev, _ = synthesize_corpus(SynthConfig.from_dict({"n_utts_per_class": n_dev, "rng_seed": 12, "utt_prefix": "D",
                                                      **TREND_CORPUS}))
    return train, dev


def test_c01_stft_matches_naive_dft(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_bin = worst_parseval = 0.0
    for _ in range(50):
        win_ms = float(rng.choice([20.0, 30.0, 50.0]))
        n_fft = int(rng.choice([1024, 2048]))
        cfg = FeatureConfig(window_ms=win_ms, shift_ms=10.0, n_fft=n_fft)
        win, hop = cfg.win_length, cfg.hop_length
        x = rng.standard_normal(int(rng.integers(win, 4 * win)))
        X = stft(x, cfg)
        ref = naive_stft(x, win, hop, n_fft)
        worst_bin = max(worst_bin, float(np.max(np.abs(X - ref) / np.abs(ref))))
        two_sided = np.concatenate([X, np.conj(X[:, -2:0:-1])], axis=1)
        w = np.hamming(win)
        for f in range(X.shape[0]):
            energy = n_fft * np.sum((w * x[f * hop:f * hop + win]) ** 2)
            worst_parseval = max(worst_parseval, abs(np.sum(np.abs(two_sided[f]) ** 2) - energy) / energy)
    elapsed = time.perf_counter() - t0
    ok = worst_bin <= 1e-9 and worst_parseval <= 1e-9 and elapsed < 30
    acceptance(1, "STFT vs naive DFT", ok,
               f"max bin rel err {worst_bin:.2e}, max Parseval rel err {worst_parseval:.2e}, {elapsed:.1f}s")
    assert ok


def test_c02_gradient_suite(acceptance):
    t0 = time.perf_counter()
    worst = run_suite(n_shapes=20, seed=0)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed < 300 and len(worst) == 8
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    acceptance(2, "gradient checks, 20 shapes per layer", ok, f"{detail}; {elapsed:.0f}s")
    assert ok


def test_c03_table1_shapes(acceptance):
    model = build_spec_cnngru(SpecCnnGruConfig(), np.random.default_rng(0), np.float32)
    chain = model.shape_chain(120)
    expected = {"Res1": (60, 257, 32), "Res2": (30, 65, 64), "Res3": (15, 17, 128), "Pool": (15, 1, 128),
                "GRU": (512,), "Dense1": (64,), "Output": (2,)}
    mismatches = {k: chain[k] for k, v in expected.items() if chain[k] != v}
    conv1_ok = chain["Conv1"] == (120, 1025, 16)
    ok = not mismatches and conv1_ok
    acceptance(3, "Table 1 shape chain at l=120", ok,
               f"Conv1 {chain['Conv1']} (1025 wide, documented), mismatches {mismatches or 'none'}")
    assert ok


def test_c04_metric_oracles(acceptance):
    rng = np.random.default_rng(404)
    params = TdcfParams()
    c1, c2 = params.coefficients()
    eer_mismatch = tdcf_worst = thr_worst = 0
    for i in range(1000):
        nb, ns = int(rng.integers(1, 40)), int(rng.integers(1, 40))
        if i % 2:
            bona, spoof = rng.integers(0, 8, nb).astype(float), rng.integers(0, 8, ns).astype(float)
        else:
            bona, spoof = rng.normal(1, 1, nb), rng.normal(0, 1, ns)
        (eer, thr), (ref_eer, ref_thr) = compute_eer((bona, spoof)), brute_eer(bona, spoof)
        eer_mismatch += eer != ref_eer
        thr_worst = max(thr_worst, abs(thr - ref_thr))
        if i < 200:
            tdcf_worst = max(tdcf_worst, abs(compute_min_tdcf((bona, spoof), params) - brute_min_tdcf(bona, spoof, c1, c2)))
    perfect = (np.array([0.9, 0.8, 0.7]), np.array([0.1, 0.2]))
    blind = (np.full(5, 0.3), np.full(4, 0.3))
    p_eer, p_tdcf, b_tdcf = compute_eer(perfect)[0], compute_min_tdcf(perfect), compute_min_tdcf(blind)
    ok = eer_mismatch == 0 and thr_worst <= 1e-12 and tdcf_worst <= 1e-12 and p_eer == 0 and p_tdcf == 0 and abs(b_tdcf - 1) <= 1e-12
    acceptance(4, "EER / min t-DCF oracles", ok,
               f"EER mismatches {eer_mismatch}/1000, threshold max diff {thr_worst:.1e}, t-DCF max diff {tdcf_worst:.1e}, "
               f"perfect EER {p_eer} t-DCF {p_tdcf}, blind t-DCF {b_tdcf:.12f}")
    assert ok


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="nFFT 512 beats 2048 on the informative synthetic corpus; see ledger")
def test_c05_resolution_trend(acceptance):
    t0 = time.perf_counter()
    train, dev = trend_corpus(200, 100)
    eers = {2048: [], 512: []}
    for seed in SEEDS:
        for n_fft in eers:
            cfg = desk_config("spec", seed=seed, window_ms=30.0, shift_ms=10.0, n_fft=n_fft)
            cfg.train.epochs = 20
            system, _, _ = train_system(cfg, train)
            eers[n_fft].append(compute_eer(system.score(dev))[0])
    elapsed = time.perf_counter() - t0
    hi, lo = statistics.median(eers[2048]), statistics.median(eers[512])
    ok = hi <= lo and elapsed < 1200
    acceptance(5, "resolution trend, median dev EER nFFT 2048 <= 512", ok,
               f"2048 {eers[2048]} median {hi:.4f}; 512 {eers[512]} median {lo:.4f}; {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="weak phase/PSD members pull the unweighted sum above the best member; see ledger")
def test_c06_ensemble_trend(acceptance):
    train, dev = trend_corpus(100, 50)
    margins, rows = [], []
    for seed in SEEDS:
        members = []
        for channel in ("magnitude", "psd", "phase"):
            cfg = desk_config("spec", channels=(channel,), seed=seed)
            cfg.train.epochs = 10
            system, _, _ = train_system(cfg, train)
            members.append(system.score(dev))
        single = [compute_eer(s)[0] for s in members]
        fused = compute_eer(fuse_scores(members))[0]
        margins.append(fused - min(single))
        rows.append(f"seed {seed}: members {[round(v, 4) for v in single]} fused {fused:.4f}")
    median = statistics.median(margins)
    ok = median <= 0.005
    acceptance(6, "score fusion vs best member", ok, f"median (fused - best) {100 * median:+.2f} pp; " + "; ".join(rows))
    assert ok


@pytest.mark.slow
def test_c07_overfit_sanity(acceptance):
    clips, _ = synthesize_corpus(SynthConfig(n_utts_per_class=20, rng_seed=21))
    reached = {}
    for kind in ("spec", "wave", "ivec"):
        cfg = desk_config(kind, seed=0)
        cfg.train.epochs = 200
        cfg.train.stop_at_train_acc = 1.0
        cfg.ivector.n_components, cfg.ivector.rank = 8, 20
        _, tlog, _ = train_system(cfg, clips)
        acc = tlog.epoch_train_acc
        reached[kind] = len(acc) if acc[-1] == 1.0 else None
    ok = len(clips) == 40 and all(reached.values())
    acceptance(7, "100% train accuracy on 40 clips within 200 epochs", ok,
               ", ".join(f"{k} epoch {v}" for k, v in reached.items()))
    assert ok


def test_c08_ivector_pipeline(acceptance):
    rng = np.random.default_rng(8)
    x = np.vstack([rng.normal(m, 1.0, (300, 3)) for m in (-6, 0, 6)])
    gmm = train_ubm(x, 3, n_iters=10, rng=rng)
    ubm_steps = np.diff(gmm.loglik_history)
    one = train_ubm(x, 1, n_iters=2)
    c1_err = max(np.max(np.abs(one.means[0] - x.mean(0))), np.max(np.abs(one.variances[0] / x.var(0) - 1)))
    t0 = rng.normal(size=(4, 3, 2))
    tv = train_tv(planted_stats(rng, t0), unit_ubm(4, 3), rank=2, n_iters=30, rng=rng)
    tv_steps = np.diff(tv.objective_history)
    angle = float(np.degrees(subspace_angles(tv.matrix, t0.reshape(12, 2))).max())
    w = extract_ivector(BwStats(np.array([2.0]), np.array([[3.0]]), 2), TVMatrix(np.ones((1, 1, 1))),
                        GmmModel(np.ones(1), np.zeros((1, 1)), np.ones((1, 1))))
    w_err = abs(w[0] - 1.0)
    ok = ubm_steps.min() >= -1e-8 and tv_steps.min() >= -1e-8 and c1_err <= 1e-10 and angle <= 5 and w_err <= 1e-12
    acceptance(8, "i-vector pipeline", ok,
               f"min UBM step {ubm_steps.min():.2e}, min TV step {tv_steps.min():.2e}, C=1 err {c1_err:.1e}, "
               f"subspace angle {angle:.2f} deg, scalar w err {w_err:.1e}")
    assert ok


def _pipeline(root):
    env = {**os.environ, "OMP_NUM_THREADS": "1", "OPENBLAS_NUM_THREADS": "1", "MKL_NUM_THREADS": "1"}
    fast = ["--set", "synth.n_utts_per_class=8", "--set", "train.epochs=2", "--set", "train.batch_size=4"]

    def cli(*argv):
        subprocess.run([sys.executable, "-m", "specreplay.cli", *argv, *fast], check=True, env=env,
                       capture_output=True)

    cli("synth", "--out", str(root / "train"), "--seed", "3")
    cli("synth", "--out", str(root / "eval"), "--seed", "4")
    cli("train", "--train", str(root / "train"), "--dev", str(root / "eval"), "--out", str(root / "spec.sprc"))
    cli("score", str(root / "spec.sprc"), "--corpus", str(root / "eval"), "--out-dir", str(root / "scores"))
    cli("eval", str(root / "scores" / "spec.scores"), "--protocol", str(root / "eval"), "--out-dir", str(root / "report"))
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c09_determinism(acceptance, tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differing and len(a) > 30
    acceptance(9, "synth->eval rerun byte-identical", ok, f"{len(a)} files compared, differing {differing or 'none'}")
    assert ok


def test_c10_breakdown_grid(acceptance):
    _, entries = synthesize_corpus(SynthConfig(n_utts_per_class=180, rng_seed=10))
    rng = np.random.default_rng(10)
    # spoof means rise (harder) towards quality A and distance A
    lines = []
    for e in entries:
        if e.label == "bonafide":
            s = rng.normal(2.0, 0.5)
        else:
            s = rng.normal(1.6 - 0.6 * "ABC".index(e.speaker_quality) - 0.3 * "ABC".index(e.attacker_distance), 0.5)
        lines.append(f"{e.utterance_id} {s!r}")
    scores = parse_scores("\n".join(lines), entries, "planted")
    report = breakdown_report(scores)
    bona = np.array([x.score for x in scores.entries if x.label == "bonafide"])
    filtering_ok = True
    for cell in CELLS:
        spoof = np.array([x.score for x in scores.entries if x.config == cell])
        got = report.cells[cell]
        filtering_ok &= got is not None and got.n_spoof == spoof.size and got.eer == compute_eer((bona, spoof))[0]
    header = report.table().splitlines()[1].split()
    ordering_ok = all(report.cells[d + "C"].eer < report.cells[d + "A"].eer for d in "ABC")
    ok = header == ["Metric", "Pooled", *CELLS] and filtering_ok and ordering_ok
    grid = " ".join(f"{c}={100 * report.cells[c].eer:.1f}" for c in CELLS)
    acceptance(10, "Pooled + AA..CC breakdown", ok, f"pooled EER {100 * report.pooled.eer:.1f}%; {grid}")
    assert ok

