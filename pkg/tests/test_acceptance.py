"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line; run with ``pytest -s`` to see them.
A criterion that is not met prints FAIL and is marked as a strict expected failure.
"""

import json
import math
import time

import numpy as np
import pytest

from oracles import gaussian_hellinger
from xokde import bandwidth
from xokde.bench import ExperimentConfig, emit_report, load_csv, make_synthetic, run_experiment
from xokde.classifier import ClassifierModel, EngineConfig
from xokde.engine import CompressionBoundError, SampleModel
from xokde.gauss import GaussianComponent
from xokde.mixture import Mixture, hellinger, moment_match, principal_split


def verdict(number, title, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}")
    assert ok, detail


def test_01_iris_reproduction(iris_full):
    report, seconds = iris_full
    acc = report.aggregate["accuracy"]["mean"]
    k = report.aggregate["mean_components"]["mean"]
    ok = 92.4 <= acc <= 99.9 and 20 <= k <= 36 and seconds <= 60 and report.aggregate["failed"] == 0
    verdict(1, "Iris reproduction", ok, f"accuracy {acc:.2f}, mean K {k:.1f}, {seconds:.1f} s")


def test_02_wine_reproduction(wine_runs):
    full, t_full = wine_runs["full"]
    diag, t_diag = wine_runs["diag"]
    a_full = full.aggregate["accuracy"]["mean"]
    a_diag = diag.aggregate["accuracy"]["mean"]
    ok = a_full >= 92 and a_diag >= 93 and t_full <= 120 and t_diag <= 120
    verdict(2, "Wine reproduction", ok,
            f"full {a_full:.2f} ({t_full:.1f} s), diagonal {a_diag:.2f} ({t_diag:.1f} s)")


def test_03_degenerate_features():
    failed, acc = {}, {}
    for kind in ("full", "diag"):
        r = run_experiment(ExperimentConfig(dataset="synthetic:1000,10,2,2", covariance=kind))
        failed[kind] = r.aggregate["failed"]
        acc[kind] = r.aggregate["accuracy"]["mean"]
    ok = not any(failed.values()) and all(np.isfinite(v) for v in acc.values())
    verdict(3, "degenerate-feature robustness", ok, f"failed shuffles {failed}, accuracy {acc}")


@pytest.mark.xfail(strict=True, reason="d=5 grid error exceeds the tolerance; see project notes")
def test_04_hellinger_oracle():
    worst = {}
    for d in (1, 2, 5):
        errs = []
        for sep in (0, 0.5, 1, 2, 4):
            for ratio in (0.5, 1, 2):
                mu = np.zeros(d)
                mu[0] = sep
                p = Mixture([1.0], [np.zeros(d)], [np.eye(d)])
                q = Mixture([1.0], [mu], [ratio * np.eye(d)])
                exact = gaussian_hellinger(np.zeros(d), np.eye(d), mu, ratio * np.eye(d))
                errs.append(abs(hellinger(p, q) - exact))
        worst[d] = max(errs)
    ok = max(worst.values()) <= 0.05
    verdict(4, "Hellinger oracle", ok, "max error per d " + ", ".join(f"{d}: {e:.3f}" for d, e in worst.items()))


def test_05_moment_preservation():
    rng = np.random.default_rng(5)
    worst = 0.0
    for d in (1, 2, 8, 32):
        for i in range(250):
            diagonal = i % 2 == 1
            mean = rng.normal(size=d) * 3
            if diagonal:
                cov = rng.uniform(0.1, 3.0, d)
            else:
                A = rng.normal(size=(d, d))
                cov = A @ A.T / d + 0.1 * np.eye(d)
            g = GaussianComponent(rng.uniform(0.1, 2.0), mean, cov)
            back = moment_match(principal_split(g))
            worst = max(worst, abs(back.weight - g.weight),
                        np.max(np.abs(back.mean - g.mean)), np.max(np.abs(back.cov - g.cov)))
    verdict(5, "moment preservation", worst <= 1e-10, f"max deviation {worst:.2e} over 1000 components")


def test_06_compression_bound():
    violations, compressions = 0, 0
    for s in range(50):
        rng = np.random.default_rng(600 + s)
        d = 2 if s % 2 == 0 else 5
        centres = rng.normal(scale=4, size=(3, d))
        X = centres[rng.integers(0, 3, 200)] + rng.normal(size=(200, d))
        model = SampleModel(d, check_bounds=True, record_history=True)
        try:
            model.add_samples(X)
        except CompressionBoundError:
            violations += 1
        compressions += len(model.history)
    verdict(6, "compression bound", violations == 0 and compressions > 0,
            f"{violations} violations in {compressions} compressions over 50 streams")


def test_07_lazy_eager_equivalence():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(500, 2)) @ np.array([[1.0, 0.4], [0.0, 0.7]])
    lazy, eager = SampleModel(2), SampleModel(2, eager=True)
    lazy.add_samples(X)
    eager.add_samples(X)
    test = rng.normal(size=(50, 2))
    diff = float(np.max(np.abs(lazy.log_likelihood(test) - eager.log_likelihood(test))))
    verdict(7, "lazy/eager equivalence", diff <= 1e-12, f"max difference {diff:.2e}")


def test_08_high_dimensional_stability():
    # Small feature units push every per-axis variance product below the float range.
    ds = make_synthetic(3000, 128, 1, seed=8)
    model = SampleModel(128, diagonal=True)
    model.add_samples(0.01 * ds.X)
    kde = model.kde()
    log_dets, _ = kde.factorization()
    naive = np.prod(kde.covs, axis=1)
    tiny = naive < np.finfo(float).tiny
    ll = model.log_likelihood(0.01 * make_synthetic(200, 128, 1, seed=9).X)
    ok = (np.isfinite(ll).all() and tiny.all() and np.isfinite(log_dets).all()
          and np.allclose(log_dets, np.log(kde.covs).sum(axis=1), rtol=1e-12))
    verdict(8, "high-dimensional stability", ok,
            f"K {len(model)}, {tiny.sum()} subnormal/zero naive determinants, "
            f"log det range [{log_dets.min():.1f}, {log_dets.max():.1f}], all likelihoods finite {np.isfinite(ll).all()}")


def test_09_bandwidth_fallback(monkeypatch, data_dir):
    ds = load_csv(data_dir / "iris.csv")
    clf = ClassifierModel(EngineConfig()).fit(ds.X, ds.y)
    natural = [m.bandwidth.fallback_used for m in clf.classes.values()]
    monkeypatch.setattr(bandwidth, "log_roughness", lambda *a, **k: -math.inf)
    model = SampleModel(3)
    model.add_samples(np.random.default_rng(9).normal(size=(20, 3)))
    bw = model.bandwidth
    ok = bw.fallback_used and np.array_equal(bw.white_H, np.eye(3)) and not any(natural)
    verdict(9, "bandwidth fallback", ok,
            f"forced fallback_used {bw.fallback_used}, white_H identity {np.array_equal(bw.white_H, np.eye(3))}, "
            f"Iris fallbacks {sum(natural)}")


def test_10_relative_performance():
    times = {}
    for kind in ("full", "diag"):
        r = run_experiment(ExperimentConfig(dataset="synthetic:5000,16,3", covariance=kind, shuffles=1))
        times[kind] = r.rows[0].train_time_s
    verdict(10, "diagonal faster than full", times["diag"] < times["full"],
            f"full {times['full']:.1f} s, diagonal {times['diag']:.1f} s")


def test_11_determinism(data_dir):
    cfg = ExperimentConfig(dataset=str(data_dir / "iris.csv"), shuffles=4, seed=11)
    first = emit_report(run_experiment(cfg), "json", include_timing=False)
    second = emit_report(run_experiment(cfg), "json", include_timing=False)
    ok = first == second and "train_time_s" not in json.loads(first)["aggregate"]
    verdict(11, "determinism", ok, f"{len(first)} bytes, identical {first == second}")
