"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL - detail`` line before
asserting, so the verdicts are visible in ``pytest -v`` output.
"""

import json
import os
import random
import time

import numpy as np

from conftest import gradcheck, param_gradcheck
from oracles import brute_dtw, brute_mixingup, brute_nt_xent, brute_ts2vec
from genpretrain.baselines import dtw_distance
from genpretrain.datasets import Dataset, split, split_sizes, synth_dataset
from genpretrain.evaluation import ResultsMatrix, average_rank, dataset_ranks, size_vs_gain, top_k
from genpretrain.generators import diffusion_loss, fit_mg, kl_divergence, n_gen_policy, sample_mg
from genpretrain.pipeline import DatasetSpec, ExperimentConfig, load_config_file, run_experiment
from genpretrain.pretrainers import mixingup_loss, nt_xent, tfc_loss, ts2vec_loss
from genpretrain.tensor import Tensor
from genpretrain.tensor import functional as F
from genpretrain.tensor.nn import MultiHeadAttention

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(__file__)), "configs")


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


# -- 1. gradient suite --------------------------------------------------------------


def _gradient_errors(seed):
    rng = np.random.default_rng(seed)
    errors = {}

    x, w, b = rng.normal(size=(2, 3, 9)), rng.normal(size=(4, 3, 3)), rng.normal(size=4)
    target = rng.normal(size=(2, 4, 9))
    errors["conv1d"] = gradcheck(lambda x, w, b: (F.conv1d(x, w, b, 1, 1) * target).sum(), x, w, b)

    x, w, b = rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=4)
    target = rng.normal(size=(3, 4))
    errors["linear"] = gradcheck(lambda x, w, b: (F.linear(x, w, b) * target).sum(), x, w, b)

    x, gamma, beta = rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6)
    target = rng.normal(size=(3, 6))
    errors["layer_norm"] = gradcheck(lambda x, g, b: (F.layer_norm(x, g, b) * target).sum(), x, gamma, beta)

    attn = MultiHeadAttention(8, 2, rng=seed)
    x, target = rng.normal(size=(2, 4, 8)), rng.normal(size=(2, 4, 8))
    errors["attention input"] = gradcheck(lambda t: (attn(t) * target).sum(), x)
    errors["attention params"] = param_gradcheck(attn, lambda: (attn(Tensor(x)) * target).sum(), seed=seed)

    h0, h1 = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    errors["nt_xent"] = gradcheck(lambda a, b: nt_xent(a, b, 0.5), h0, h1)
    z0, z1 = rng.normal(size=(3, 5, 2)) * 0.5, rng.normal(size=(3, 5, 2)) * 0.5
    errors["ts2vec_loss"] = gradcheck(ts2vec_loss, z0, z1)
    pi, pj, pk = (rng.normal(size=(4, 5)) for _ in range(3))
    lam = rng.uniform(size=4)
    errors["mixingup_loss"] = gradcheck(lambda a, b, c: mixingup_loss(a, b, c, lam, 0.5), pi, pj, pk)
    feats = [rng.normal(size=(3, 4)) for _ in range(8)]
    errors["tfc_loss"] = gradcheck(lambda *f: tfc_loss(*f, tau=0.5), *feats)

    mu, logvar = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)) * 0.5
    errors["vae kl"] = gradcheck(kl_divergence, mu, logvar)
    noise = rng.normal(size=(3, 1, 8))
    errors["diffusion mse"] = gradcheck(lambda p: diffusion_loss(noise, p), rng.normal(size=(3, 1, 8)))
    return errors


def test_criterion_1_gradient_suite(capsys):
    started = time.perf_counter()
    worst_name, worst = None, 0.0
    for seed in range(5):
        for name, err in _gradient_errors(seed).items():
            if err >= worst:
                worst_name, worst = f"{name} (seed {seed})", err
    elapsed = time.perf_counter() - started
    ok = worst < 1e-4 and elapsed < 120.0
    verdict(capsys, 1, ok, f"max rel err {worst:.2e} at {worst_name}, {elapsed:.1f}s")


# -- 2. loss oracles ---------------------------------------------------------------


def test_criterion_2_loss_oracles(capsys):
    rng = np.random.default_rng(2)
    worst = {"nt_xent": 0.0, "ts2vec_loss": 0.0, "mixingup_loss": 0.0}
    cases = 0
    for n in range(1, 9):
        for _ in range(20):
            if n >= 2:  # one sample leaves an anchor without negatives
                h0, h1 = rng.normal(size=(n, 6)), rng.normal(size=(n, 6))
                tau = rng.uniform(0.1, 1.0)
                for exclude in (True, False):
                    got = nt_xent(h0, h1, tau, exclude_positive=exclude).item()
                    err = abs(got - brute_nt_xent(h0, h1, tau, exclude))
                    worst["nt_xent"] = max(worst["nt_xent"], err)

            t = int(rng.integers(1, 9))
            z0, z1 = rng.normal(size=(n, t, 3)) * 0.5, rng.normal(size=(n, t, 3)) * 0.5
            worst["ts2vec_loss"] = max(worst["ts2vec_loss"], abs(ts2vec_loss(z0, z1).item() - brute_ts2vec(z0, z1)))

            pi, pj, pk = (rng.normal(size=(n, 5)) for _ in range(3))
            lam, tau = rng.uniform(size=n), rng.uniform(0.1, 1.0)
            err = abs(mixingup_loss(pi, pj, pk, lam, tau).item() - brute_mixingup(pi, pj, pk, lam, tau))
            worst["mixingup_loss"] = max(worst["mixingup_loss"], err)
            cases += 1
    ok = all(v <= 1e-9 for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(capsys, 2, ok, f"{cases} cases per loss, N 1..8, max abs err: {detail}")


# -- 3. DTW oracle ----------------------------------------------------------------


def test_criterion_3_dtw_oracle(capsys):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        a = rng.normal(size=int(rng.integers(1, 9)))
        b = rng.normal(size=int(rng.integers(1, 9)))
        worst = max(worst, abs(dtw_distance(a, b) - brute_dtw(a, b)))
    example = dtw_distance([1.0, 2.0, 3.0], [1.0, 2.0, 2.0, 3.0])
    ok = worst <= 1e-12 and example == 0.0
    verdict(capsys, 3, ok, f"100 pairs, max abs err {worst:.1e}; DTW([1,2,3],[1,2,2,3]) = {example}")


# -- 4. split protocol -----------------------------------------------------------


def test_criterion_4_split_protocol(capsys):
    sizes = split(synth_dataset("three-class-waves", n=100, length=8), 0).sizes()
    exact = list(sizes.values()) == [50, 30, 10, 10]
    rng = np.random.default_rng(4)
    failures = []
    for _ in range(100):
        n, seed = int(rng.integers(10, 500)), int(rng.integers(0, 2**31))
        ds = Dataset(rng.normal(size=(n, 1, 2)), rng.integers(0, 4, n))
        b = split(ds, seed)
        parts = [b.pretrain.indices, b.train.indices, b.validation.indices, b.test.indices]
        joined = np.concatenate(parts)
        if len(joined) != n or len(np.unique(joined)) != n:
            failures.append((n, seed, "overlap"))
        if hasattr(b.pretrain, "y") or hasattr(b.test, "y"):
            failures.append((n, seed, "labels leaked"))
        if list(b.sizes().values()) != list(split_sizes(n).values()):
            failures.append((n, seed, "sizes"))
    ok = exact and not failures
    verdict(capsys, 4, ok, f"N=100 -> {'/'.join(map(str, sizes.values()))}; {len(failures)} failures over 100 pairs")


# -- 5. generation budget -------------------------------------------------------


def test_criterion_5_generation_budget(capsys):
    cases = {(500, 1494): 1494, (2000, 1494): 2000, (3000, 3398): 3398}
    got = {k: n_gen_policy(*k) for k in cases}
    verdict(capsys, 5, got == cases, ", ".join(f"{k}->{v}" for k, v in got.items()))


# -- 6. MG statistics -------------------------------------------------------------


def test_criterion_6_mg_statistics(capsys):
    real = synth_dataset("gaussian-blobs-walk", n=50, length=64, seed=6).X
    model = fit_mg(real)
    n = 10_000
    spec = np.fft.rfft(sample_mg(model, n, 6), axis=-1)
    hits, live_bins, flat_ok = 0, 0, True
    for emp, mean, var in ((spec.real, model.mean_real, model.var_real), (spec.imag, model.mean_imag, model.var_imag)):
        live = var > 1e-20  # imaginary DC and Nyquist parts carry no variance
        dev = np.abs(emp.mean(axis=0) - mean)
        hits += int(np.sum(dev[live] <= 3 * np.sqrt(var[live] / n)))
        live_bins += int(live.sum())
        flat_ok &= bool(np.all(dev[~live] < 1e-9))
    frac = hits / live_bins
    ok = len(real) == 50 and frac >= 0.95 and flat_ok
    verdict(capsys, 6, ok, f"{hits}/{live_bins} bins within 3 SE ({frac:.3f})")


# -- 7. desk-scale run --------------------------------------------------------------


DESK = dict(
    backbone="resnet", generator="rw", seed=0, epochs=30, finetune_epochs=30, batch_size=64, val_every=10,
    dataset=DatasetSpec("three-class-waves", n=300, length=64, noise=0.3, seed=0),
    backbone_options={"widths": (32, 64, 64)},
)


def test_criterion_7_desk_run(capsys):
    started = time.perf_counter()
    pretrained = run_experiment(ExperimentConfig(ptm="timeclr", **DESK))
    elapsed = time.perf_counter() - started
    baseline = run_experiment(ExperimentConfig(ptm=None, **DESK))
    acc = pretrained.test_accuracy
    ok = pretrained.status == "complete" and acc >= 0.90 and elapsed < 600.0
    verdict(
        capsys, 7, ok,
        f"{pretrained.method} acc {acc:.3f} in {elapsed:.0f}s; {baseline.method} (no pretraining) acc "
        f"{baseline.test_accuracy:.3f} in {baseline.wall_time:.0f}s",
    )


def test_desk_config_file_matches_criterion_7():
    configs = load_config_file(os.path.join(CONFIGS, "desk.yaml"))
    assert {c.method for c in configs} == {"ResNet", "ResNet+TimeCLR+RW"}
    for c in configs:
        assert c.dataset == DESK["dataset"] and c.epochs == 30 and c.finetune_epochs in (None, 30)
        assert tuple(c.backbone_options["widths"]) == (32, 64, 64)


# -- 8. ranking math ----------------------------------------------------------------


def test_criterion_8_ranking_math(capsys):
    acc = {
        "A": [0.9, 0.9, 0.5, 0.8],
        "B": [0.8, 0.9, 0.7, 0.4],
        "C": [0.7, 0.6, 0.6, 0.5],
    }
    datasets = ["d1", "d2", "d3", "d4"]
    table = average_rank(ResultsMatrix(list(acc), datasets, list(acc.values())))
    expected = {"A": (1 + 1.5 + 3 + 1) / 4, "B": (2 + 1.5 + 1 + 3) / 4, "C": (3 + 3 + 2 + 2) / 4}
    tie = dataset_ranks(np.array([[0.9], [0.9], [0.6]]))[:, 0].tolist()
    order = top_k(table)
    stable = True
    shuffler = random.Random(8)
    for _ in range(20):
        names = list(acc)
        shuffler.shuffle(names)
        again = average_rank(ResultsMatrix(names, datasets, [acc[m] for m in names]))
        stable &= top_k(again) == order and again.as_dict() == expected
    ok = table.as_dict() == expected and tie == [1.5, 1.5, 3.0] and order == ["A", "B", "C"] and stable
    verdict(capsys, 8, ok, f"avg ranks {table.as_dict()}, tied cell {tie[:2]}, top_k {order}")


# -- 9. size vs gain --------------------------------------------------------------


def test_criterion_9_size_vs_gain(capsys):
    rng = np.random.default_rng(9)
    sizes = rng.integers(50, 5000, 25)
    gain = 0.2 - 4e-5 * sizes + rng.normal(0, 0.01, 25)
    base = rng.uniform(0.3, 0.6, 25)
    rec = lambda method, d, acc, size: {
        "method": method, "dataset": d, "test_accuracy": float(acc), "pretrain_size": int(size),
        "status": "complete", "config": {"seed": 0},
    }
    a = [rec("A", f"d{i:02d}", base[i] + gain[i], sizes[i]) for i in range(25)]
    b = [rec("B", f"d{i:02d}", base[i], sizes[i]) for i in range(25)]
    fit = size_vs_gain(a, b)

    x = np.array([p[1] for p in fit.points], dtype=float)
    y = np.array([p[2] for p in fit.points], dtype=float)
    slope = np.sum((x - x.mean()) * (y - y.mean())) / np.sum((x - x.mean()) ** 2)
    intercept = y.mean() - slope * x.mean()
    err = max(abs(fit.slope - slope), abs(fit.intercept - intercept))
    ok = err <= 1e-12 and fit.slope < 0
    verdict(capsys, 9, ok, f"slope {fit.slope:.3e}, intercept {fit.intercept:.4f}, closed-form diff {err:.1e}")


# -- 10. determinism ---------------------------------------------------------------


def test_criterion_10_determinism(capsys):
    config = ExperimentConfig(
        backbone="resnet", ptm="timeclr", generator="rw", epochs=3, batch_size=16, val_every=1, seed=10,
        dataset=DatasetSpec("three-class-waves", n=60, length=24, noise=0.3, seed=10),
        backbone_options={"widths": (8, 16, 16)},
    )
    first, second = run_experiment(config).to_json(), run_experiment(config).to_json()
    ok = first == second and json.loads(first)["status"] == "complete"
    verdict(capsys, 10, ok, f"two runs of {json.loads(first)['method']}: {len(first)} bytes, identical={first == second}")
