"""Acceptance suite: one test per primary criterion, run on the default benchmark.

Each test records a PASS/FAIL line; ``conftest.py`` prints them all at the end
of the session.  Run alone with ``pytest tests/test_acceptance.py -s``.
"""
import time

import numpy as np
import pytest

from orderdisent.cli import main
from orderdisent.experiments import (
    COMPARISON_ROWS, Experiment, RowSpec, location_probe, run_ablation, run_comparison,
)
from orderdisent.gradcheck import run_gradcheck
from orderdisent.metrics import confusion, f1_from, metrics
from orderdisent.net import NetworkConfig
from orderdisent.objectives import DISCRIMINATOR_GROUPS, MAIN_GROUPS, ordinal_loss
from orderdisent.seqgen import GeneratorConfig, generate
from orderdisent.trainer import TrainConfig, adjacent_distance, train

SEEDS = [0, 1, 2, 3, 4]
RESULTS: dict[int, str] = {}

# reference (precision, recall, F1) triples; F1 must follow from P and R
PRINTED_ROWS = [
    (80.52, 84.89, 82.64),
    (69.16, 67.07, 68.10),
    (75.19, 61.33, 67.55),
    (75.24, 46.82, 57.73),
    (77.56, 73.11, 75.27),
]

NO_ADVERSARIAL = RowSpec("no-adversarial control", "proposed", weights={"adv": 0.0})


def record(n: int, ok: bool, detail: str):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def bench():
    data, manifest = generate(GeneratorConfig(), 0)
    exp = Experiment(data, manifest, NetworkConfig(input_dim=data.x.shape[1]), TrainConfig())
    exp.timings = {}
    return exp


def _timed(exp, spec):
    for s in SEEDS:
        key = (spec.method, spec.ratio, tuple(sorted(spec.weights.items())), s)
        if key not in exp._cache:
            t0 = time.perf_counter()
            exp.run(spec, s)
            exp.timings[key] = time.perf_counter() - t0


def test_criterion_1_gradient_fidelity():
    rep = run_gradcheck(n_cases=100, seed=0, h=1e-5)
    ok = rep.passed(1e-4) and rep.seconds < 60
    record(1, ok, f"max rel error {rep.max_rel_error:.2e} over {rep.cases} cases, "
                  f"{rep.routing_violations} routing violations, {rep.seconds:.1f}s")


def test_criterion_2_routing_exactness(bench):
    seen, violations = {"discriminator": 0, "main": 0}, 0

    class Done(Exception):
        pass

    def check(kind, before, after):
        nonlocal violations
        frozen = MAIN_GROUPS if kind == "discriminator" else DISCRIMINATOR_GROUPS
        violations += not after.equal(before, frozen)
        seen[kind] += 1
        if seen["main"] == 50:
            raise Done

    with pytest.raises(Done):
        train(bench.train_set, bench.visible(None, 0), bench.val_set, bench.net_config,
              TrainConfig(seed=0), callback=check)
    ok = seen["discriminator"] == seen["main"] == 50 and violations == 0
    record(2, ok, f"{seen['main']} batches, {violations} violations")


def _brute(pred, truth):
    c = [0, 0, 0, 0]
    for a, b in zip(pred, truth):
        c[(0 if b else 1) if a else (2 if b else 3)] += 1
    return tuple(c)


def test_criterion_3_metrics_oracle():
    f1_errors = [abs(f1_from(p, r) - f1) for p, r, f1 in PRINTED_ROWS]
    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 1001))
        pred, truth = rng.integers(0, 2, n), rng.integers(0, 2, n)
        c = confusion(pred, truth)
        tp, fp, fn, tn = _brute(pred, truth)
        m = metrics(c)
        expect_acc = 100.0 * (tp + tn) / n
        mismatches += (c.tp, c.fp, c.fn, c.tn) != (tp, fp, fn, tn) or m.accuracy != expect_acc
    ok = max(f1_errors) <= 0.02 and mismatches == 0
    record(3, ok, f"max F1 deviation {max(f1_errors):.4f}, {mismatches} recount mismatches / 1000")


def _mean(exp, spec, metric):
    return float(np.mean([getattr(exp.test_report(exp.run(spec, s).params), metric) for s in SEEDS]))


def test_criterion_4_semi_supervised_gain(bench):
    sup, prop = COMPARISON_ROWS[1], COMPARISON_ROWS[4]
    for spec in (sup, prop):
        _timed(bench, spec)
    seconds = sum(v for k, v in bench.timings.items() if k[0] in ("supervised", "proposed") and k[1] is None
                  and not k[2])
    a_sup, a_prop = _mean(bench, sup, "accuracy"), _mean(bench, prop, "accuracy")
    ok = a_prop >= a_sup + 2.0 and seconds <= 600
    record(4, ok, f"proposed {a_prop:.2f} vs supervised {a_sup:.2f} (gain {a_prop - a_sup:+.2f}, need +2.00), "
                  f"{seconds:.0f}s")


def test_criterion_5_ablation_direction(bench):
    table = run_ablation(None, None, SEEDS, experiment=bench)
    recall = [table.mean(i, "recall") for i in range(4)]
    f1 = [table.mean(i, "f1") for i in range(4)]
    ok_a = recall[3] >= recall[2]
    ok_b = f1[3] == max(f1)
    record(5, ok_a and ok_b,
           f"(a) recall order {recall[3]:.2f} vs disentangle-only {recall[2]:.2f} {'ok' if ok_a else 'violated'}; "
           f"(b) F1 by row {', '.join(f'{v:.2f}' for v in f1)} {'full best' if ok_b else 'full not best'}")


def test_criterion_6_disentanglement(bench):
    prop = COMPARISON_ROWS[4]
    probe_p = [location_probe(bench.run(prop, s).params, bench, s) for s in SEEDS]
    probe_c = [location_probe(bench.run(NO_ADVERSARIAL, s).params, bench, s) for s in SEEDS]
    val_p = np.mean([max(bench.run(prop, s).val_accuracy) for s in SEEDS])
    val_c = np.mean([max(bench.run(NO_ADVERSARIAL, s).val_accuracy) for s in SEEDS])
    gap = float(np.mean(probe_c) - np.mean(probe_p))
    ok = gap >= 0.15 and val_c - val_p <= 2.0
    record(6, ok, f"probe on z_u: proposed {np.mean(probe_p):.3f}, control {np.mean(probe_c):.3f} "
                  f"(gap {gap:.3f}, need 0.150); UC val accuracy {val_p:.2f} vs {val_c:.2f}")


def test_criterion_7_ordinal_suite():
    cases = [
        (([0, 0], [1, 0], [3, 0], 1.0), 0.0),     # zero region
        (([0, 0], [1, 0], [2, 0], 3.0), 0.0),     # d1 + eps == d2 exactly
        (([0, 0], [2, 0], [1, 0], 0.5), 3.5),     # positive region
        (([0.3, -1], [2, 2], [2, 2], 0.7), 0.7),  # equal distances leave the margin
        (([0, 0], [1, 0], [1, 0], 0.0), 0.0),
    ]
    exact = sum(ordinal_loss(*args) == want for args, want in cases)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(500):
        d = int(rng.integers(2, 17))
        z = rng.standard_normal((3, d)) * rng.uniform(0.1, 3.0)
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        eps = float(rng.uniform(0, 2))
        worst = max(worst, abs(ordinal_loss(*(z @ q.T), eps) - ordinal_loss(*z, eps)))
    ok = exact == len(cases) and worst <= 1e-9
    record(7, ok, f"{exact}/{len(cases)} hinge cases exact, rotation deviation {worst:.1e}")


def test_criterion_8_determinism(bench, tmp_path):
    first = run_comparison(None, None, SEEDS, experiment=bench).to_csv()
    cfg = tmp_path / "default.cfg"
    cfg.write_text("# defaults\n")
    args = ["compare", "--config", str(cfg), "--seed", "0", "--seeds", ",".join(map(str, SEEDS))]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    second = (tmp_path / "a" / "comparison.csv").read_text()
    ok = first == second
    record(8, ok, f"two independent compare runs over seeds {SEEDS}: "
                  f"{'byte-identical' if ok else 'outputs differ'} ({len(second)} bytes)")


# benchmark properties of the trainer; these reuse the runs cached above


def test_full_labels_beat_ten_percent(bench):
    full, partial = COMPARISON_ROWS[0], COMPARISON_ROWS[1]
    assert _mean(bench, partial, "accuracy") < _mean(bench, full, "accuracy")
    assert all(max(bench.run(full, s).val_accuracy[:50]) >= 95.0 for s in SEEDS)


def test_pseudo_label_count_non_decreasing(bench):
    counts = np.mean([bench.run(COMPARISON_ROWS[2], s).pseudo_counts for s in SEEDS], axis=0)
    assert (np.diff(counts) >= 0).all()


def test_order_term_contracts_validation_steps(bench):
    for s in SEEDS:
        r = bench.run(COMPARISON_ROWS[4], s)
        assert adjacent_distance(r.params, bench.val_set) <= adjacent_distance(r.initial_params, bench.val_set)
