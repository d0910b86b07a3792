"""Smoke tests for the _rankseg extension module.

Usage: python3 test_smoke.py <directory containing _rankseg*.so>
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, sys.argv[1])

import _rankseg as rs  # noqa: E402


def approx(a, b, tol=1e-12):
    assert abs(a - b) < tol, f"{a} != {b} (tol {tol})"


def test_ops():
    approx(rs.sigmoid(0.0), 0.5)
    sm = rs.softmax([0.0, 0.0, 0.0])
    for v in sm:
        approx(v, 1.0 / 3.0)


def test_selection():
    sel = rs.top_k_select([0.9, 0.1, 0.5], kappa=2)
    assert sel["indices"] == [0, 2]
    assert sel["scores"] == [0.9, 0.5]

    dyn = rs.top_k_select([0.9, 0.2, 0.6], mode="dynamic_threshold", threshold=0.5)
    assert dyn["indices"] == [0, 2]

    oracle = rs.top_k_select([0.1, 0.9, 0.8], mode="oracle_gt", gt=[1, 0, 1])
    assert oracle["indices"] == [2, 0]

    assert rs.build_multilabel_target([1, 4, 1], 6, 6) == [0, 1, 0, 0, 1, 0]


def test_rank_softmax():
    z = rs.rank_softmax([[2.0, 0.0]], [1.0, 0.5])
    e2 = math.exp(2.0)
    approx(z[0][0], e2 / (e2 + 1.0), 1e-10)
    approx(z[0][1], 1.0 / (e2 + 1.0), 1e-10)


def test_losses_metrics():
    # gamma = 0, margin = 0 reduces to binary cross entropy
    approx(rs.asymmetric_loss([0.5, 0.5], [1, 0], 0.0, 0.0, 0.0), math.log(2.0))

    loss, included = rs.selected_ce([[0.25] * 4] * 3, [3, 1, 7], [3, 1, 7, 5], 8)
    assert included == 3
    approx(loss, math.log(4.0))

    miou, per_class = rs.miou([0, 1, 1, 0], [0, 1, 1, 0], 2, 2)
    approx(miou, 1.0)
    assert per_class == [1.0, 1.0]

    approx(rs.mean_average_precision([0.9, 0.1], [0, 1], 2, 1), 0.5)
    approx(rs.spearman([0, 1, 2, 3], [9, 7, 5, 3]), -1.0)


def test_dataset_roundtrip():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "d.rseg")
        rs.generate_dataset(path, 16, num_classes=16, height=16, width=16, channels=4,
                            max_classes=4, seed=7)
        stats = rs.dataset_stats(path)
        assert stats["num_samples"] == 16
        assert stats["num_classes"] == 16
        report = rs.distribution_report(path)
        assert report[-1][1] == 100.0
        cum = [pct for _, pct in report]
        assert cum == sorted(cum)


TINY_CONFIG = """
synth = 1
synth_classes = 12
synth_height = 16
synth_width = 16
synth_channels = 4
synth_max_classes = 4
synth_train_n = 48
synth_test_n = 16
dim = 32
depth = 1
heads = 2
mlp_ratio = 2
kappa = 6
epochs = 1
batch_size = 16
"""


def test_train_eval():
    with tempfile.TemporaryDirectory() as tmp:
        report = json.loads(rs.train(TINY_CONFIG, tmp))
        assert 0.0 <= report["miou"] <= 1.0
        assert report["map"] is not None
        assert len(report["epochs"]) == 1
        assert os.path.exists(os.path.join(tmp, "model.bin"))

        again = json.loads(rs.train(TINY_CONFIG, ""))
        report["wallclock_sec"] = again["wallclock_sec"] = 0.0
        assert report == again, "training is not deterministic"

        test_path = os.path.join(tmp, "test.rseg")
        rs.generate_dataset(test_path, 16, num_classes=12, height=16, width=16, channels=4,
                            max_classes=4, seed=0, stream_offset=1 << 32)
        metrics = rs.evaluate(os.path.join(tmp, "model.bin"), test_path, "predicted", 6)
        assert 0.0 <= metrics["miou"] <= 1.0

        tau = rs.dump_tau(os.path.join(tmp, "model.bin"))
        assert len(tau) == 12
        assert tau[0][0] == "0"


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok  {test.__name__}")
    print(f"{len(tests)} python smoke tests passed")


if __name__ == "__main__":
    main()
