"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""
import json
import time

import numpy as np
import pytest

from qifs.cli import main
from qifs.features import N_FEATURES, build_matrix, extract_features
from qifs.forest import ForestConfig, cross_validate, roc_auc
from qifs.qubo_select import (
    AnnealSchedule,
    CorrelationSet,
    build_qubo,
    builtin_subset,
    correlations,
    load_named_subset,
    solve_exhaustive,
    solve_sa,
    spearman,
)
from qifs.synthetic import SyntheticConfig, generate_synthetic
from qifs.txmodel import AddressClass

from oracles import oracle_features, oracle_spearman, pairwise_auc, random_correlations

ALPHAS = (0.3, 0.5, 0.7)


@pytest.fixture
def verdict(capsys):
    def record(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return record


def _instance(rng, n):
    rho_o, pairs = random_correlations(rng, n)
    return CorrelationSet(rho_outcome=rho_o, rho_pairs=pairs)


def test_sa_matches_exhaustive(verdict):
    rng = np.random.default_rng(2024)
    instances = [build_qubo(_instance(rng, 12), float(rng.uniform(0, 1))) for _ in range(100)]
    # compile the kernels outside the timed loop
    solve_sa(instances[0])
    solve_exhaustive(instances[0])
    start = time.perf_counter()
    matches = 0
    for qubo in instances:
        matches += solve_sa(qubo).energy == solve_exhaustive(qubo).energy
    elapsed = time.perf_counter() - start
    verdict(1, matches >= 95 and elapsed < 10.0, f"{matches}/100 exact energy matches in {elapsed:.2f}s")


def test_alpha_extremes(verdict):
    rng = np.random.default_rng(7)
    failures = []
    for i in range(20):
        corr = _instance(rng, 12)
        for solve in (solve_sa, solve_exhaustive):
            everything = solve(build_qubo(corr, 1.0))
            nothing = solve(build_qubo(corr, 0.0))
            if everything.n_selected != 12:
                failures.append(f"instance {i} {solve.__name__}: alpha=1 picked {everything.n_selected}")
            if nothing.energy != 0.0:
                failures.append(f"instance {i} {solve.__name__}: alpha=0 energy {nothing.energy}")
    verdict(2, not failures, "; ".join(failures) or "20 instances, both solvers, all 12 at alpha=1, energy 0 at alpha=0")


def test_spearman_oracle(verdict):
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        # inject ties by snapping a random share of entries onto a coarse grid
        for v in (x, y):
            share = rng.uniform(0, 1)
            snap = rng.uniform(size=n) < share
            v[snap] = np.round(v[snap] * rng.integers(1, 4))
        worst = max(worst, abs(spearman(x, y) - oracle_spearman(x, y)))
    verdict(3, worst <= 1e-12, f"1000 pairs, max |diff| {worst:.3g}")


def _feature_histories():
    planted, rates_planted = generate_synthetic(SyntheticConfig(addresses_per_class=42, seed=31))
    plain, rates_plain = generate_synthetic(
        SyntheticConfig(addresses_per_class=42, seed=32, tx_count_range=(1, 60), planted_informative_features=())
    )
    return [(h, rates_planted) for h in planted[:250]] + [(h, rates_plain) for h in plain[:250]]


def test_feature_oracle(verdict):
    pairs = _feature_histories()
    worst, bad_shape = 0.0, 0
    for history, rates in pairs:
        got = extract_features(history, rates)
        want = oracle_features(history, rates)
        if got.shape != (N_FEATURES,) or N_FEATURES != 69 or not np.all(np.isfinite(got)):
            bad_shape += 1
            continue
        scale = np.maximum(1.0, np.abs(want))
        worst = max(worst, float(np.max(np.abs(got - want) / scale)))
    ok = len(pairs) == 500 and bad_shape == 0 and worst <= 1e-9
    verdict(4, ok, f"{len(pairs)} histories, {bad_shape} malformed vectors, max relative diff {worst:.3g}")


def test_auc_oracle(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 120))
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, int(rng.integers(2, 30)), size=n) / 7.0
        worst = max(worst, abs(roc_auc(scores, labels) - pairwise_auc(scores, labels)))
    verdict(5, worst <= 1e-12, f"200 score sets, max |diff| {worst:.3g}")


@pytest.fixture(scope="module")
def planted_run():
    start = time.perf_counter()
    cfg = SyntheticConfig(addresses_per_class=100, seed=0, class_separation=1.5)
    histories, rates = generate_synthetic(cfg)
    matrix = build_matrix(histories, rates, cfg.target_class)
    corr = correlations(matrix)
    forest = ForestConfig(seed=0)
    full = cross_validate(matrix, np.ones(matrix.n, dtype=np.int8), forest, k=10)
    runs = []
    for alpha in ALPHAS:
        selection = solve_sa(build_qubo(corr, alpha), AnnealSchedule(seed=0), matrix.names)
        runs.append((alpha, selection, cross_validate(matrix, selection.mask, forest, k=10)))
    # the alpha whose subset scores the best cross-validated F1
    best = max(runs, key=lambda run: run[2].f1)
    return {
        "cfg": cfg,
        "full": full,
        "runs": runs,
        "best": best,
        "elapsed": time.perf_counter() - start,
    }


def test_planted_recovery(verdict, planted_run):
    cfg = planted_run["cfg"]
    alpha, selection, metrics = planted_run["best"]
    full = planted_run["full"]
    hits = sorted(set(selection.selected_names) & set(cfg.planted_informative_features))
    ok = len(hits) >= 4 and metrics.f1 >= full.f1 - 0.05 and planted_run["elapsed"] < 300
    detail = (
        f"best alpha {alpha}: {len(hits)}/5 planted {hits}, F1 {metrics.f1:.3f} vs full {full.f1:.3f}, "
        f"{planted_run['elapsed']:.0f}s"
    )
    verdict(6, ok, detail)


def test_training_time_direction(verdict, planted_run):
    _, selection, metrics = planted_run["best"]
    full = planted_run["full"]
    ok = metrics.train_time_seconds < full.train_time_seconds
    detail = (
        f"{selection.n_selected} features {metrics.train_time_seconds:.3f}s "
        f"vs 69 features {full.train_time_seconds:.3f}s"
    )
    verdict(7, ok, detail)


WALL_TIME_KEYS = {"wall_time_seconds", "train_time_seconds"}


def _strip_wall_time(value):
    if isinstance(value, dict):
        return {k: _strip_wall_time(v) for k, v in value.items() if k not in WALL_TIME_KEYS}
    if isinstance(value, list):
        return [_strip_wall_time(v) for v in value]
    return value


def _artifacts(out):
    found = {}
    for path in sorted(out.iterdir()):
        if path.suffix == ".json":
            found[path.name] = _strip_wall_time(json.loads(path.read_text()))
        elif path.name == "report.txt":
            # the last column holds training time
            found[path.name] = [line.rsplit(None, 1)[0] for line in path.read_text().splitlines() if line.strip()]
        else:
            found[path.name] = path.read_bytes()
    return found


def _pipeline(out):
    args = ["--out", str(out), "--seed", "13"]
    steps = [
        ["synth", *args, "--addresses-per-class", "20"],
        ["extract", *args],
        ["select", *args, "--alpha", "0.7"],
        ["select", *args, "--solver", "named", "--subset", "qa9"],
        ["train", "full", *args, "--folds", "5"],
        ["train", str(out / "selection_sa.json"), *args, "--folds", "5"],
        ["train", str(out / "selection_qa9.json"), *args, "--folds", "5"],
        ["report", *args],
    ]
    return [main(step) for step in steps]


def test_pipeline_determinism(verdict, tmp_path, capsys):
    codes_a = _pipeline(tmp_path / "a")
    codes_b = _pipeline(tmp_path / "b")
    capsys.readouterr()
    first, second = _artifacts(tmp_path / "a"), _artifacts(tmp_path / "b")
    differing = sorted(name for name in set(first) | set(second) if first.get(name) != second.get(name))
    ok = set(codes_a + codes_b) == {0} and not differing and len(first) >= 10
    verdict(8, ok, f"{len(first)} artifacts compared, differing: {differing or 'none'}")


def test_named_subsets_replay(verdict, small_synthetic):
    histories, rates = small_synthetic
    matrix = build_matrix(histories, rates, AddressClass.MIXER)
    details = []
    ok = True
    for key, weight in (("qa9", 9), ("qa_bqm7", 7)):
        mask = load_named_subset(builtin_subset(key), matrix.names)
        metrics = cross_validate(matrix, mask, ForestConfig(seed=0), k=5)
        ok &= int(mask.sum()) == weight and metrics.confusion.sum() == matrix.m
        details.append(f"{key} weight {int(mask.sum())} F1 {metrics.f1:.3f}")
    verdict(9, ok, ", ".join(details))
