"""Acceptance gate: nine end-to-end checks, one test and one printed
verdict line each (run with -s to see them).

Covers: published-speedup reproduction, partition table layout, transfer
cost range, SSIM correctness, analytic gradients, the privacy-vs-depth
trend, planner optimality, split-execution equivalence, and the
threshold selection rule.
"""
import contextlib
import dataclasses

import numpy as np
import pytest

import teesplit as ts
from conftest import smooth_images
import test_engine
import test_planner
import test_ssim


@contextlib.contextmanager
def verdict(tag):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE FAIL {tag}")
        raise
    print(f"ACCEPTANCE PASS {tag}")


# ---------------------------------------------------------------------------
# 1. published speedups

SPEEDUP_CASES = [
    # arch, boundary, full-enclave s, partitioned s, speedup %
    ("vgg16", "Layer 8", 4.2, 1.4, 66.6),
    ("resnet50", "Layer 4", 4.02, 3.6, 10.4),
    ("resnet50", "Layer 3", 4.02, 3.04, 24.3),
    ("efficientnetb0", "Layer 4", 3.7, 2.5, 32.4),
]


def test_01_speedup_reproduction():
    with verdict("1 speedup reproduction (four shipped operating points)"):
        for arch, label, fe, total, pct in SPEEDUP_CASES:
            prof = ts.builtin_profile(arch)
            m = ts.build_architecture(arch)
            asg = next(a for a in ts.enumerate_partitions(m)
                       if a.boundary_label == label)
            got = ts.predict(prof, asg)
            assert abs(prof.full_enclave_seconds - fe) < 1e-9, (arch, label)
            assert abs(100.0 * got.speedup_vs_full_enclave - pct) <= 0.5, \
                (arch, label, got.speedup_vs_full_enclave)
            assert abs(got.total_seconds - total) <= 0.005 * fe, \
                (arch, label, got.total_seconds)


# ---------------------------------------------------------------------------
# 2. partition tables

RESNET50_TABLE = [
    ("Layer 1", "1 conv", "48 conv + 1 FC"),
    ("Layer 2", "10 conv", "39 conv + 1 FC"),
    ("Layer 3", "22 conv", "27 conv + 1 FC"),
    ("Layer 4", "40 conv", "9 conv + 1 FC"),
    ("Layer 5", "49 conv", "1 FC"),
]

EFFICIENTNETB0_TABLE = [
    ("Layer 1", "1 conv", "16 MBConv + 1 conv + 1 FC"),
    ("Layer 2", "1 conv + 1 MBConv", "15 MBConv + 1 conv + 1 FC"),
    ("Layer 3", "1 conv + 3 MBConv", "13 MBConv + 1 conv + 1 FC"),
    ("Layer 4", "1 conv + 5 MBConv", "11 MBConv + 1 conv + 1 FC"),
    ("Layer 5", "1 conv + 8 MBConv", "8 MBConv + 1 conv + 1 FC"),
    ("Layer 6", "1 conv + 11 MBConv", "5 MBConv + 1 conv + 1 FC"),
    ("Layer 7", "1 conv + 15 MBConv", "1 MBConv + 1 conv + 1 FC"),
    ("Layer 8", "1 conv + 16 MBConv + 1 conv", "1 FC"),
]


def test_02_partition_tables():
    with verdict("2 partition tables cell-for-cell"):
        for arch, table in (("resnet50", RESNET50_TABLE),
                            ("efficientnetb0", EFFICIENTNETB0_TABLE)):
            rows = ts.enumerate_partitions(ts.build_architecture(arch))
            assert len(rows) == len(table)
            for a, (label, enc, acc) in zip(rows, table):
                assert a.boundary_label == label
                assert ts.format_counts(a.enclave_counts) == enc
                assert ts.format_counts(a.accelerator_counts) == acc
        vgg = ts.enumerate_partitions(ts.build_architecture("vgg16"))
        assert len(vgg) == 13
        for k, a in enumerate(vgg, start=1):
            assert a.boundary_label == f"Layer {k}"
            assert ts.format_counts(a.enclave_counts) == f"{k} conv"
            rest = f"{13 - k} conv + 3 FC" if k < 13 else "3 FC"
            assert ts.format_counts(a.accelerator_counts) == rest


# ---------------------------------------------------------------------------
# 3. transfer cost range

def test_03_transfer_cost_range():
    with verdict("3 transfer time in [0.02, 0.1] s at every boundary"):
        for arch in ("vgg16", "resnet50", "efficientnetb0"):
            prof = ts.builtin_profile(arch)
            for a in ts.enumerate_partitions(ts.build_architecture(arch)):
                t = prof.transfer.seconds_for(a.exposed_tensor_bytes)
                assert 0.02 - 1e-12 <= t <= 0.1 + 1e-12, (arch, a.boundary_label, t)


# ---------------------------------------------------------------------------
# 4. SSIM correctness

def test_04_ssim_correctness():
    with verdict("4 SSIM identity, closed form, symmetry, bounds, oracle"):
        rng = np.random.default_rng(41)
        img = rng.uniform(0, 1, (3, 16, 16))
        assert ts.ssim(img, img) == 1.0

        p = ts.SsimParams()
        c1 = (p.k1 * p.dynamic_range) ** 2
        for av, bv in ((0.0, 1.0), (0.3, 0.8), (0.5, 0.5)):
            a = np.full((1, 16, 16), av)
            b = np.full((1, 16, 16), bv)
            want = (2.0 * av * bv + c1) / (av * av + bv * bv + c1)
            assert abs(ts.ssim(a, b) - want) <= 1e-12, (av, bv)

        for _ in range(50):
            a, b = test_ssim.rand_pair(rng, (2, 14, 14))
            assert abs(ts.ssim(a, b) - ts.ssim(b, a)) <= 1e-12

        for _ in range(1000):
            a, b = test_ssim.rand_pair(rng, (1, 13, 13))
            assert abs(ts.ssim(a, b)) <= 1.0

        for i in range(20):
            shape = [(1, 12, 12), (3, 14, 14), (2, 11, 16), (1, 16, 11)][i % 4]
            a, b = test_ssim.rand_pair(rng, shape)
            assert abs(ts.ssim(a, b) - test_ssim.ssim_oracle(a, b)) <= 1e-9


# ---------------------------------------------------------------------------
# 5. analytic gradients vs finite differences

def test_05_gradient_correctness():
    with verdict("5 input gradients match finite differences on 50 models"):
        rng = np.random.default_rng(555)
        kinds_seen = set()
        checked = skipped = 0
        for _ in range(50):
            m = test_engine.build_random_model(rng)
            kinds_seen |= {layer.kind for layer in m.layers}
            c, s = test_engine.gradient_check(m, rng, tol=1e-4)
            checked += c
            skipped += s
        assert checked >= 4 * max(skipped, 1)
        assert kinds_seen == test_engine.ALL_KINDS, \
            test_engine.ALL_KINDS - kinds_seen


# ---------------------------------------------------------------------------
# 6. privacy falls with depth

def spearman(xs, ys):
    def ranks(vs):
        order = sorted(range(len(vs)), key=lambda i: vs[i])
        out = [0.0] * len(vs)
        i = 0
        while i < len(order):
            j = i
            while j + 1 < len(order) and vs[order[j + 1]] == vs[order[i]]:
                j += 1
            for k in range(i, j + 1):
                out[order[k]] = (i + j) / 2.0 + 1.0
            i = j + 1
        return np.asarray(out)

    rx = ranks(xs) - np.mean(ranks(xs))
    ry = ranks(ys) - np.mean(ranks(ys))
    return float((rx * ry).sum() / np.sqrt((rx ** 2).sum() * (ry ** 2).sum()))


def test_06_privacy_trend():
    with verdict("6 reconstruction similarity decreases with depth (5 models)"):
        cfg = ts.AttackConfig(steps=120, step_size=0.05, init_seed=7)
        for seed in (1, 2, 3, 4, 5):
            m = ts.build_toy_cnn(points=4, input_shape=(1, 16, 16), seed=seed)
            images = smooth_images(20, (1, 16, 16), seed=100 + seed)
            report = ts.evaluate_privacy(m, images, cfg)
            means = [mu for _, mu, _ in report.per_point]
            assert len(means) >= 4
            assert spearman(range(1, len(means) + 1), means) < 0.0, (seed, means)
            assert means[-1] < means[0], (seed, means)
            ts.clear_weight_cache()


# ---------------------------------------------------------------------------
# 7. planner against brute force

def test_07_planner_optimality():
    with verdict("7 plan equals brute force on 1000 requests, properties hold"):
        rng = np.random.default_rng(77)
        parts = {k: test_planner.toy_request_parts(points=k) for k in range(2, 7)}
        for trial in range(1000):
            m, asg = parts[2 + trial % 5]
            req = test_planner.random_request(rng, m, asg)
            got = ts.plan(req)
            ref = ts.brute_force_plan(req)
            assert got.chosen_boundary == ref.chosen_boundary, trial
            assert got.breakdown.total_seconds == ref.breakdown.total_seconds
            assert [a.feasible for a in got.alternatives] == \
                   [a.feasible for a in ref.alternatives]

            # feasibility soundness of the choice
            values = [v for _, v in req.scores]
            if got.chosen_boundary is not None:
                i = [lab for lab, _ in req.scores].index(got.chosen_boundary)
                assert values[i] <= req.threshold
                assert all(v <= req.threshold + req.slack for v in values[i:])
            else:
                for i, v in enumerate(values):
                    ok = v <= req.threshold and all(
                        w <= req.threshold + req.slack for w in values[i:])
                    assert not ok, trial

            # raising the threshold never shrinks the feasible set or
            # worsens the achieved runtime
            wider = ts.plan(dataclasses.replace(
                req, threshold=req.threshold + float(rng.uniform(0.0, 0.2))))
            narrow_ok = {a.boundary_label for a in got.alternatives if a.feasible}
            wide_ok = {a.boundary_label for a in wider.alternatives if a.feasible}
            assert narrow_ok <= wide_ok, trial
            assert wider.breakdown.total_seconds <= \
                got.breakdown.total_seconds + 1e-12, trial


# ---------------------------------------------------------------------------
# 8. split execution equals unsplit execution

def test_08_split_execution_equivalence():
    with verdict("8 pipeline output bitwise equal at every boundary"):
        x = np.random.default_rng(88).uniform(0.0, 1.0, (3, 64, 64))
        for arch in ("vgg16", "resnet50", "efficientnetb0"):
            prof = ts.builtin_profile(arch)
            m = ts.build_architecture(arch, input_shape=(3, 64, 64))
            ref = ts.forward(m, x)
            for label in m.labels():
                res = ts.simulate_pipeline(m, label, x, prof)
                assert np.array_equal(res.output, ref), (arch, label)
                assert res.ledger.crossings("feature_map") == 1, (arch, label)
            ts.clear_weight_cache()


# ---------------------------------------------------------------------------
# 9. threshold selection rule on narrative curves

def test_09_selection_rule_fidelity():
    with verdict("9 selection rule on drop, dip, and hover curves"):
        t, slack = 0.2, 0.05
        drop = [("Layer 1", 0.82), ("Layer 2", 0.55), ("Layer 3", 0.34),
                ("Layer 4", 0.19), ("Layer 5", 0.11), ("Layer 6", 0.06)]
        assert ts.select_optimal_partition(drop, t, slack) == "Layer 4"

        dip = [("Layer 1", 0.62), ("Layer 2", 0.17), ("Layer 3", 0.41),
               ("Layer 4", 0.15), ("Layer 5", 0.09)]
        assert ts.select_optimal_partition(dip, t, slack) == "Layer 4"

        hover = [("Layer 1", 0.26), ("Layer 2", 0.19), ("Layer 3", 0.23),
                 ("Layer 4", 0.21), ("Layer 5", 0.18)]
        assert ts.select_optimal_partition(hover, t, slack) == "Layer 2"
        # without slack the hovering tail disqualifies every early point
        assert ts.select_optimal_partition(hover, t, 0.0) == "Layer 5"
