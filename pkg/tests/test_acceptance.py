"""End-to-end acceptance criteria.

Each test prints one ``[PASS]``/``[FAIL]`` line with the measured value, then
asserts. Run with ``pytest -s tests/test_acceptance.py`` or read them from the
``-v`` log. Criteria 4, 5 and 6 are slow.
"""

import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from vlcloc.config import from_dict, load_config
from vlcloc.geometry import contains_many
from vlcloc.nn import backward, forward, init_net, mse_loss
from vlcloc.pipeline import (isolation_audit, load_or_generate_corpus, prepare_splits,
                             run_pipeline, search, train_augmenter)
from vlcloc.report import error_summary, histogram_distance
from vlcloc.spectra import CHANNELS, load_csv, save_csv, strip_coordinates
from vlcloc.tabgan import sample_array

from test_geometry import winding_number

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
STRESS_SEEDS = (0, 1, 2, 3, 4)
# smaller than the stress config so two runs stay well inside ten minutes
REDUCED = {
    "stress": {"enabled": True},
    "localizer": {"n_trials": 2, "max_epochs": 30},
    "gan": {"epochs": 30},
}


@pytest.fixture
def verdict(capsys):
    def emit(n, name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {name}: {detail}")
        assert ok, detail
    return emit


def rel_error(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


def test_c01_gradient_check(verdict):
    t0 = time.time()
    combos = [(h, o) for h in ("relu", "tanh") for o in ("identity", "tanh", "sigmoid")]
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        hidden, out_act = combos[seed % len(combos)]
        depth = int(rng.integers(1, 4))
        sizes = [int(w) for w in rng.integers(1, 9, depth + 2)]
        net = init_net(sizes, hidden, out_act, seed=seed)
        # random biases move ReLU pre-activations off the kink
        net = net.with_params([p if p.ndim == 2 else rng.normal(0, 0.5, p.shape)
                               for p in net.params()])
        x = rng.normal(size=(3, sizes[0]))
        t = rng.normal(size=(3, sizes[-1]))
        out, cache = forward(net, x)
        grads = backward(net, cache, mse_loss(out, t)[1])
        params, h = net.params(), 1e-5
        for k, (p, g) in enumerate(zip(params, grads.params())):
            num = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                bumped = [q.copy() for q in params]
                bumped[k][idx] += h
                up = mse_loss(forward(net.with_params(bumped), x)[0], t)[0]
                bumped[k][idx] -= 2 * h
                down = mse_loss(forward(net.with_params(bumped), x)[0], t)[0]
                num[idx] = (up - down) / (2 * h)
            worst = max(worst, float(rel_error(g, num).max()))
    dt = time.time() - t0
    verdict(1, "gradient check", worst < 1e-4 and dt < 10,
            f"max rel error {worst:.2e} (< 1e-4) over 20 nets in {dt:.1f} s")


def test_c02_corpus_size(default_corpus, verdict):
    n = len(default_corpus)
    verdict(2, "corpus arithmetic", n == 5040, f"{n} samples (expected 42 x 30 x 4 = 5040)")


def test_c03_point_in_polygon_oracle(room, verdict):
    poly, _ = room
    x0, y0, x1, y1 = poly.bbox()
    pts = np.random.default_rng(2024).uniform((x0, y0), (x1, y1), size=(10_000, 2))
    fast = contains_many(poly, pts)
    oracle = np.array([winding_number(poly, x, y) != 0 for x, y in pts])
    agree = float(np.mean(fast == oracle))
    verdict(3, "point-in-polygon oracle", agree == 1.0, f"agreement {agree:.2%} on 10000 points")


@pytest.mark.slow
def test_c04_baseline_scale(verdict):
    t0 = time.time()
    cfg = from_dict({})
    corpus = load_or_generate_corpus(cfg, cfg.seed)
    train, val, test = prepare_splits(cfg, corpus, cfg.seed)
    _, model, _ = search(cfg, train, val, cfg.seed)
    err = error_summary(model, test).mean_euclidean_cm
    verdict(4, "baseline localization", err < 100,
            f"test mean error {err:.2f} cm (< 100) with {cfg.n_trials} trials "
            f"in {(time.time() - t0) / 60:.1f} min")


@pytest.mark.slow
def test_c05_gan_fidelity(verdict):
    t0 = time.time()
    cfg = from_dict({})
    train, _, _ = prepare_splits(cfg, load_or_generate_corpus(cfg, cfg.seed), cfg.seed)
    gan, _ = train_augmenter(cfg, train, cfg.seed)
    synth = sample_array(gan, 6000, seed=1)
    real = strip_coordinates(train)
    tv = {c: histogram_distance(real, synth, c).tv_distance for c in CHANNELS}
    worst = max(tv, key=tv.get)
    verdict(5, "GAN fidelity", max(tv.values()) <= 0.25,
            f"max TV {tv[worst]:.3f} on {worst} (<= 0.25); Clear {tv['Clear']:.3f}, "
            f"F5 {tv['F5']:.3f}; {(time.time() - t0) / 60:.1f} min")


@pytest.mark.slow
def test_c06_augmentation_benefit(verdict):
    t0 = time.time()
    cfg = load_config(CONFIGS / "stress.json")
    runs = [run_pipeline(cfg, seed=s) for s in STRESS_SEEDS]
    base = [r.baseline_summary.mean_euclidean_cm for r in runs]
    aug = [r.augmented_summary.mean_euclidean_cm for r in runs]
    # every run must also keep the bookkeeping and isolation invariants
    assert all(r.augmentation.generated == r.augmentation.kept + r.augmentation.discarded_oob
               for r in runs)
    assert all(r.test_overlap == 0 for r in runs)
    mb, ma = statistics.median(base), statistics.median(aug)
    per_seed = ", ".join(f"{b:.1f}->{a:.1f}" for b, a in zip(base, aug))
    verdict(6, "augmentation benefit", ma < mb,
            f"median {mb:.2f} -> {ma:.2f} cm, relative improvement {(mb - ma) / mb:.1%} "
            f"(reference 20%); per seed [{per_seed}]; {(time.time() - t0) / 60:.1f} min")


@pytest.fixture(scope="module")
def twin_runs(tmp_path_factory):
    cfg = from_dict(REDUCED)
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    return (a, run_pipeline(cfg, seed=11, out_dir=a)), (b, run_pipeline(cfg, seed=11, out_dir=b))


def test_c07_bookkeeping(twin_runs, verdict):
    (out, res), _ = twin_runs
    a = res.augmentation
    synth_rows = len(load_csv(out / "synthetic.csv"))
    pseudo_rows = len(load_csv(out / "pseudo.csv"))
    ok = a.generated == a.kept + a.discarded_oob and synth_rows == a.generated \
        and pseudo_rows == a.kept
    verdict(7, "bookkeeping identity", ok,
            f"generated {a.generated} = kept {a.kept} + discarded {a.discarded_oob}")


def test_c08_determinism(twin_runs, verdict):
    (a, _), (b, _) = twin_runs
    names = ["result.json", "baseline.model.json", "gan.model.json", "augmented.model.json"]
    names += sorted(str(p.relative_to(a)) for p in (a / "report").glob("*.svg"))
    differ = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    verdict(8, "determinism", not differ,
            f"{len(names) - len(differ)}/{len(names)} artifacts byte-identical"
            + (f"; differ: {differ}" if differ else ""))


def test_c09_csv_round_trip(default_corpus, tmp_path, verdict):
    save_csv(default_corpus, tmp_path / "a.csv")
    save_csv(load_csv(tmp_path / "a.csv"), tmp_path / "b.csv")
    save_csv(load_csv(tmp_path / "b.csv"), tmp_path / "c.csv")
    same = (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes() \
        == (tmp_path / "a.csv").read_bytes()
    verdict(9, "CSV round trip", same, f"{len(default_corpus)} rows, second save byte-identical")


def test_c10_isolation(twin_runs, verdict):
    (out, res), _ = twin_runs
    test, train = load_csv(out / "test.csv"), load_csv(out / "train.csv")
    mixed, val = load_csv(out / "mixed.csv"), load_csv(out / "val.csv")
    recount = isolation_audit(test, [train, val, mixed], strip_coordinates(train))
    verdict(10, "test isolation", res.test_overlap == 0 and recount == 0,
            f"{res.test_overlap} rows shared (pipeline audit), {recount} on re-read artifacts")
