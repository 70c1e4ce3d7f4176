"""The eleven acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import json
import math
import os
import time

import numpy as np
import pytest

from acceptance_log import LINES
from dpsynth.accountant import (
    ORDERS,
    AccountantLedger,
    Gaussian,
    PrivacySpec,
    SubsampledGaussian,
    calibrate_sigma,
    compose_and_convert,
    delta_default,
    rdp_gaussian,
    rdp_subsampled_gaussian,
)
from dpsynth.audits import audit_dppromise, audit_sensitivity
from dpsynth.dataio import Dataset
from dpsynth.embeddings import RffMap, mean_embedding, median_bandwidth, mmd2, rff_features
from dpsynth.errors import BudgetError
from dpsynth.fidelity import GaussianFit, fit_gaussian, frechet_distance, inception_score_proxy, precision_recall
from dpsynth.mechanisms import clip_rows
from dpsynth.pipeline import ERROR_MARKER, ExperimentConfig, run_experiment
from dpsynth.rng import SeededRng
from dpsynth.synthesizers import (
    NoiseSchedule,
    denoiser_spec,
    denoising_loss,
    dpdmlite_train,
    dpfeta_train,
    dpmerf_train,
    generate_merf,
    generator_spec,
    pe_synthesize,
)
from dpsynth.tinynn import DpSgdConfig, MlpSpec, ModelCheckpoint, dpsgd_step, init_checkpoint, per_example_grads
from dpsynth.utility import classifier_spec, correct_count, run_protocols, train_snapshots
from nn_oracle import fd_grad, random_net, relative_error
from test_fidelity import brute_precision_recall


class Verdict:
    def __init__(self, number, title, limit_s):
        self.number, self.title, self.limit_s = number, title, limit_s
        self.checks = []
        self.t0 = time.perf_counter()

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))

    def finish(self):
        elapsed = time.perf_counter() - self.t0
        if self.limit_s is not None:
            self.check("runtime", elapsed < self.limit_s, f"{elapsed:.1f}s < {self.limit_s}s")
        ok = all(c[1] for c in self.checks)
        failed = [f"{n} ({d})" for n, good, d in self.checks if not good]
        summary = "; ".join(f"{n}: {d}" for n, _, d in self.checks if d)
        line = f"criterion {self.number}: {'PASS' if ok else 'FAIL'} {self.title} | {summary}"
        # printed once per criterion in the terminal summary (see conftest)
        LINES.append(line)
        assert ok, "failed checks: " + ", ".join(failed)


@pytest.fixture
def verdict():
    def make(number, title, limit_s=None):
        return Verdict(number, title, limit_s)
    return make


def test_criterion_01_sensitivity(verdict):
    v = verdict(1, "sensitivity audit", 5)
    rep = audit_sensitivity(max_m=5)
    rows = rep.details["rows"]
    for notion, bound in (("replace_one", lambda m: 2 / m), ("add_remove_known_m", lambda m: 1 / m)):
        gaps = [abs(r["achieved"] - bound(r["m"])) for r in rows if r["alphabet"] == "pm1" and r["notion"] == notion]
        v.check(f"pm1 {notion}", len(gaps) == 5 and max(gaps) <= 1e-12, f"max gap {max(gaps):.1e}")
    v.check("no bound exceeded", rep.passed, "audit passed" if rep.passed else json.dumps(rep.witness)[:200])
    v.finish()


def test_criterion_02_accountant(verdict):
    v = verdict(2, "accountant", 30)
    ledger = AccountantLedger()
    ledger.append(Gaussian(1.0))
    eps = compose_and_convert(ledger, 1e-5)
    alphas = np.linspace(1.0001, 256, 2_000_000)
    dense = float(np.min(alphas / 2 + math.log(1e5) / (alphas - 1)))
    v.check("single release", abs(eps - 5.30) <= 0.01 and abs(dense - 5.30) <= 0.01,
            f"ledger {eps:.4f}, dense oracle {dense:.4f}")
    worst = 0.0
    for sigma in (0.5, 1.0, 3.7):
        for a in ORDERS:
            worst = max(worst, abs(rdp_subsampled_gaussian(1.0, sigma, int(a)) - rdp_gaussian(sigma, a)))
    v.check("q=1 closed form", worst <= 1e-9, f"max abs diff {worst:.1e}")
    rng = SeededRng(2024)
    misses = 0
    for _ in range(100):
        target = PrivacySpec(float(rng.uniform() * 9.5 + 0.5), float(10 ** -(rng.uniform() * 3 + 4)))
        q = float(10 ** -(rng.uniform() * 2.5 + 0.5))
        steps = int(rng.integers(1990) + 10)
        sigma = calibrate_sigma(target, q, steps)
        led = AccountantLedger()
        led.append(SubsampledGaussian(q, sigma, steps))
        got = led.epsilon(target.delta)
        misses += not (target.epsilon - 1e-3 <= got <= target.epsilon)
    v.check("calibrate round trip", misses == 0, f"{100 - misses}/100 in [eps-1e-3, eps]")
    v.finish()


def test_criterion_03_gradients(verdict):
    v = verdict(3, "per-example gradients vs finite differences", 60)
    rng = np.random.default_rng(3)
    worst = 0.0
    for loss in ("mse", "cross_entropy"):
        for _ in range(20):
            ck = random_net(rng, loss)
            sizes = ck.spec.layer_sizes
            X = rng.normal(size=(2, sizes[0]))
            T = rng.normal(size=(2, sizes[-1])) if loss == "mse" else rng.integers(sizes[-1], size=2)
            G = per_example_grads(ck, X, T, loss)
            for i in range(2):
                ref = fd_grad(ck.params, sizes, ck.spec.activation, ck.spec.output_head, X[i], T[i], loss)
                worst = max(worst, relative_error(G[i], ref))
    v.check("40 nets", worst <= 1e-4, f"max relative error {worst:.1e}")
    v.finish()


def test_criterion_04_dpsgd(verdict):
    v = verdict(4, "DP-SGD contract")
    rng = SeededRng(4)
    G = rng.normal((10_000, 12)) * (10 ** (rng.uniform((10_000, 1)) * 6 - 3))
    worst = 0.0
    for C in (1e-3, 0.1, 1.0, 7.5):
        norms = np.linalg.norm(clip_rows(G, C), axis=1)
        worst = max(worst, float(np.max(norms / C)))
    v.check("clipped norms <= C", worst <= 1.0 + 1e-12, f"max norm/C {worst:.15f}")
    spec = MlpSpec((3, 4, 2), "tanh", "linear")
    ck = init_checkpoint(spec, rng)
    Gs = rng.normal((8, spec.n_params)) * 1e-3
    out = dpsgd_step(ck, Gs, DpSgdConfig(100.0, 0.0, 1.0, 0.7, 1), rng)
    diff = float(np.max(np.abs(out.params - (ck.params - 0.7 * Gs.mean(0)))))
    v.check("sigma=0 equals SGD", diff <= 1e-12, f"max diff {diff:.1e}")
    v.finish()


def test_criterion_05_fidelity(verdict):
    v = verdict(5, "fidelity closed forms", 10)
    fit = fit_gaussian(SeededRng(5).normal((100, 6)))
    fd0 = frechet_distance(fit, fit)
    v.check("identical fits", abs(fd0) <= 1e-8, f"{fd0:.1e}")
    fd1 = frechet_distance(GaussianFit(np.array([0.0]), np.array([[1.0]])), GaussianFit(np.array([3.0]),
                                                                                        np.array([[4.0]])))
    v.check("univariate", fd1 == 10.0, f"{fd1!r}")
    is_vals = [inception_score_proxy(np.eye(K)) for K in (2, 5, 10)]
    v.check("IS one-hot", all(abs(x - K) <= 1e-9 * K for x, K in zip(is_vals, (2, 5, 10))),
            ", ".join(f"{x:.12g}" for x in is_vals))
    rng = SeededRng(55)
    R, S = rng.uniform((20, 2)), rng.uniform((20, 2)) * 1.2
    got, ref = precision_recall(R, S, k=3), brute_precision_recall(R, S, 3)
    v.check("precision/recall", got == ref, f"{got} vs oracle {ref}")
    v.finish()


def _merf_mmd(train, test, target, seed, eval_map):
    bw = median_bandwidth(SeededRng(seed, stream=105).uniform((500, train.dim)))
    fmap = RffMap.draw(train.dim, 200, bw, SeededRng(seed, stream=11))
    ledger = AccountantLedger()
    ck = dpmerf_train(train, fmap, target, generator_spec(train.dim, train.K), iters=500, rng=SeededRng(seed),
                      ledger=ledger)
    X, _ = generate_merf(ck, 1000, SeededRng(seed, stream=103))
    score = mmd2(mean_embedding(X, eval_map), mean_embedding(test.flat(), eval_map))
    return score, ck.meta["history"], ledger


@pytest.mark.slow
def test_criterion_06_dpmerf(verdict, gaussians):
    v = verdict(6, "DP-MERF desk run", 180)
    train, test = gaussians.part("train"), gaussians.part("test")
    eval_map = RffMap.draw(train.dim, 2000, 0.1, SeededRng(606))
    target = PrivacySpec(1.0, delta_default(len(train)))
    private, clean, ratios, events = [], [], [], set()
    for seed in range(10):
        m_inf, hist, led_inf = _merf_mmd(train, test, None, seed, eval_map)
        m_1, _, led_1 = _merf_mmd(train, test, target, seed, eval_map)
        clean.append(m_inf)
        private.append(m_1)
        ratios.append(hist[-1][1] / hist[0][1])
        events |= {len(led_inf), len(led_1)}
    v.check("objective < 10% at eps=inf", max(ratios) < 0.1, f"worst final/initial {max(ratios):.4f}")
    v.check("mmd eps=1 >= eps=inf", np.mean(private) >= np.mean(clean),
            f"mean MMD2 {np.mean(private):.3e} vs {np.mean(clean):.3e}")
    v.check("one ledger event", events == {1}, f"event counts {sorted(events)}")
    v.finish()


def test_criterion_07_pe(verdict, gaussians):
    v = verdict(7, "PE convergence", 60)
    private = gaussians.part("train").flat()
    curves = []
    for seed in range(10):
        dists = []

        def track(t, cands):
            d2 = ((cands[:, None, :] - private[None, :, :]) ** 2).sum(-1)
            dists.append(float(np.sqrt(d2.min(1)).mean()))

        pe_synthesize(private, 300, 8, 0.0, rng=SeededRng(seed), on_iteration=track)
        curves.append(dists)
    mean = np.mean(curves, axis=0)
    v.check("iterations", len(mean) == 9, f"{len(mean) - 1} rounds")
    v.check("nonincreasing", bool(np.all(np.diff(mean) <= 0)), " ".join(f"{x:.4f}" for x in mean))
    v.finish()


@pytest.mark.slow
def test_criterion_08_dpdm_feta(verdict, digits):
    v = verdict(8, "DPDM-lite vs DP-FETA", 600)
    train, val = digits.part("train"), digits.part("val")
    sched = NoiseSchedule.linear(100)
    spec = denoiser_spec(train.dim, train.K, (64, 64))
    target = PrivacySpec(10.0, delta_default(len(train)))
    ledgers = []
    for k in (1, 32):
        led = AccountantLedger()
        dpdmlite_train(train, sched, target, spec, DpSgdConfig(1.0, None, 64 / len(train), 0.5, 3), k_mult=k,
                       rng=SeededRng(8), ledger=led)
        ledgers.append(led)
    same = ledgers[0].events == ledgers[1].events and np.array_equal(ledgers[0].rdp(), ledgers[1].rdp())
    v.check("multiplicity ledger-neutral", same, "k=1 and k=32 ledgers identical" if same else "differ")
    wins, gaps, eps = 0, [], []
    for seed in range(10):
        cfg = DpSgdConfig(1.0, None, 64 / len(train), 0.5, 200)
        losses = []
        for frac in (0.0, 0.1):
            led = AccountantLedger()
            ck = dpfeta_train(train, sched, target, spec, cfg, k_mult=32, n_central=1, central_fraction=frac,
                              pixel_clip=4.0, rng=SeededRng(seed), ledger=led)
            losses.append(denoising_loss(ck, sched, val, SeededRng(1000 + seed)))
            eps.append(led.epsilon(target.delta))
        wins += losses[1] < losses[0]
        gaps.append(losses[0] - losses[1])
    v.check("matched budget", max(eps) <= 10.0 and min(eps) >= 10.0 - 1e-3, f"eps in [{min(eps):.4f}, {max(eps):.4f}]")
    v.check("FETA wins >= 6/10", wins >= 6, f"{wins}/10 wins, mean loss gap {np.mean(gaps):.4f}")
    v.finish()


def test_criterion_09_utility(verdict, digits):
    v = verdict(9, "utility protocols", 120)
    tr = digits.part("train")
    fmap = RffMap.draw(tr.dim, 400, median_bandwidth(SeededRng(9).uniform((500, tr.dim))), SeededRng(90))
    gen = dpmerf_train(tr, fmap, PrivacySpec(1.0, delta_default(len(tr))), generator_spec(tr.dim, tr.K),
                       iters=200, rng=SeededRng(91))
    X, y = generate_merf(gen, 1000, SeededRng(92))
    syn = Dataset(X.reshape(-1, *tr.shape), y, tr.K)
    spec = classifier_spec(digits.dim, digits.K, (32,))
    dominance, noiseless_ok, totals = 0, 0, []
    seeds = range(10)
    for seed in seeds:
        res = run_protocols(syn, digits, spec, SeededRng(seed), eps_train=1.0, eps_val=1.0, epochs=6)
        dominance += res["senv"].test_accuracy >= res["noisy_senv"].test_accuracy
        totals.append(res["noisy_senv"].eps_total)
        clean = run_protocols(syn, digits, spec, SeededRng(seed), eps_train=1.0, noiseless=True, epochs=6)
        # replay the shared trajectory and take the clean validation argmax
        rng = SeededRng(seed)
        perm = rng.spawn(52).permutation(len(syn))
        n_hold = int(round(0.1 * len(syn)))
        snaps = train_snapshots(syn.subset(perm[n_hold:]), spec, 6, 1, 0.2, 64, rng)
        counts = [correct_count(c, digits.part("val")) for _, c in snaps]
        noiseless_ok += clean["noisy_senv"].selected_step == snaps[int(np.argmax(counts))][0]
    mixed = run_protocols(syn, digits, spec, SeededRng(0), eps_train=0.5, eps_val=2.0, epochs=1)
    v.check("senv >= noisy_senv", dominance == len(seeds), f"{dominance}/{len(seeds)} seeds")
    v.check("noiseless = val argmax", noiseless_ok == len(seeds), f"{noiseless_ok}/{len(seeds)} seeds")
    v.check("eps_total", all(t == 1.0 for t in totals) and mixed["noisy_senv"].eps_total == 2.0,
            "eps_t=eps_v=1 -> 1; (0.5, 2) -> 2")
    v.finish()


def test_criterion_10_dppromise(verdict):
    v = verdict(10, "DP-Promise reconstruction")
    rep = audit_dppromise(trials=100)
    v.check("exact recovery", rep.passed and rep.witness["max_error"] < 1e-9,
            f"max error {rep.witness['max_error']:.1e} over {rep.details['trials']} trials")
    v.finish()


SMALL = {
    "dp-merf": {"data": {"sensitive": "three_gaussians"}, "method_config": {"D": 100, "iters": 100}},
    "pe": {"data": {"sensitive": "three_gaussians"}, "method_config": {"n_candidates": 60}},
    "dpdm-lite": {"data": {"sensitive": "toy_digits", "public": "public_digits"},
                  "method_config": {"steps": 20, "k_mult": 4, "pretrain": {"mode": "random_label", "iters": 30}}},
    "dp-feta": {"data": {"sensitive": "toy_digits"}, "method_config": {"steps": 20, "k_mult": 4,
                                                                         "central_iters": 30}},
    "privimage": {"data": {"sensitive": "toy_digits", "public": "public_digits"},
                  "method_config": {"steps": 20, "k_mult": 4, "k_frac": 0.5, "query_iters": 50,
                                    "pretrain": {"mode": "unconditional", "iters": 30}}},
}


def _small_config(method, **over):
    d = {"method": method, "seed": 3, "privacy": {"epsilon": 5.0},
         "eval": {"n_synthetic": 100, "classifier": {"epochs": 2, "hidden": [16]}}, **SMALL[method]}
    d.update(over)
    return ExperimentConfig.from_dict(d)


def test_criterion_11_pipeline(verdict, tmp_path):
    v = verdict(11, "pipeline determinism and budget guard", 1200)
    identical = []
    for method in SMALL:
        cfg = _small_config(method)
        blobs = []
        for name in ("a", "b"):
            rec = run_experiment(cfg, str(tmp_path / name))
            with open(os.path.join(rec.run_dir, "metrics.json"), "rb") as fh:
                blobs.append(fh.read())
        identical.append(blobs[0] == blobs[1])
    v.check("metrics.json byte-identical", all(identical),
            f"{sum(identical)}/{len(identical)} methods")
    aborted = []
    for method, key in (("dp-merf", "sigma"), ("pe", "sigma_hist"), ("dpdm-lite", "sigma")):
        d = json.loads(json.dumps(SMALL[method]))
        d["method_config"][key] = 0.3
        d["method_config"].pop("pretrain", None)
        d.pop("data")
        cfg = _small_config(method, data={"sensitive": SMALL[method]["data"]["sensitive"]},
                            method_config=d["method_config"])
        try:
            run_experiment(cfg, str(tmp_path / "guard"))
            aborted.append(False)
        except BudgetError:
            run_dir = tmp_path / "guard" / cfg.run_id
            aborted.append((run_dir / ERROR_MARKER).exists() and not (run_dir / "metrics.json").exists())
    v.check("budget guard aborts", all(aborted), f"{sum(aborted)}/{len(aborted)} over-budget runs stopped")
    v.finish()
