"""Python surface smoke tests: every exported operation does real work once."""

import numpy as np
import pytest

import anynet


def tiny_config(**overrides):
    base = dict(
        family="inclusive-sparse",
        blocks=2,
        width=8,
        bottleneck=1,
        subnetworks=2,
        scales=1,
        classes=4,
    )
    base.update(overrides)
    return anynet.ArchConfig(**base)


def test_flops_matches_known_coordinates():
    cfg = anynet.ArchConfig(
        family="inclusive-sparse",
        blocks=15,
        width=96,
        bottleneck=4,
        cardinality=18,
        subnetworks=6,
        scales=3,
        classes=10,
    )
    assert anynet.count_flops(cfg, 1) == 13873802
    report = anynet.audit_network(cfg)
    assert report.totals == [13873802, 30696714, 50468746, 73189898, 98860170, 127479562]
    assert report.at(1).head_units == 12938
    assert "flops" in report.csv().splitlines()[0]


def test_forward_stream_and_sparsity():
    cfg = tiny_config()
    net = anynet.build_network(cfg, seed=3)
    assert net.cardinality == 6  # 0.75 * width / bottleneck
    x = np.random.default_rng(0).normal(size=(2, 3, 16, 16))

    y = net.forward(x, k=1)
    assert y.shape == (2, 4)
    assert np.isfinite(y).all()

    steps = list(anynet.InterruptibleStream(net, x))
    assert [s.k for s in steps] == [1, 2]
    np.testing.assert_array_equal(steps[0].logits[0], net.forward(x, k=1))
    np.testing.assert_array_equal(steps[1].logits[0], net.forward(x, k=2))

    report = anynet.audit_network(cfg, image_size=16)
    assert steps[0].total_units == 2 * report.at(1).total  # two samples in the batch
    assert anynet.verify_sparsity(net) == []


def test_budget_restriction():
    cfg = tiny_config()
    report = anynet.audit_network(cfg, image_size=16)
    assert anynet.restrict_to_budget(report, report.at(1).total) == 1
    assert anynet.restrict_to_budget(report, report.at(2).total) == 2
    with pytest.raises(ValueError, match="below the cheapest"):
        anynet.restrict_to_budget(report, 1)


def test_train_eval_checkpoint_roundtrip(tmp_path):
    cfg = tiny_config()
    ds = anynet.synth_dataset(seed=5, n=96, classes=4, image_size=16)
    assert len(ds) == 96 and ds.classes == 4
    train_idx, val_idx = anynet.split_indices(len(ds), 16, seed=5)

    net = anynet.build_network(cfg, seed=5)
    log = anynet.train_joint(
        net, ds, train_idx, val_idx, epochs=1, batch_size=16, augment=False, seed=5
    )
    assert log.last(1, 1, "val").error <= 1.0
    assert log.csv().splitlines()[1].startswith("epoch,")

    errors, losses = anynet.evaluate(net, ds, val_idx, batch_size=16)
    assert errors.shape == (2, 1) and losses.shape == (2, 1)

    path = str(tmp_path / "net.ckpt")
    anynet.save_checkpoint(net, "smoke-config", path)
    assert anynet.checkpoint_config_text(path) == "smoke-config"

    restored = anynet.build_network(cfg, seed=99)
    anynet.load_checkpoint(restored, path)
    x = np.random.default_rng(1).normal(size=(3, 3, 16, 16))
    np.testing.assert_array_equal(restored.forward(x, k=2), net.forward(x, k=2))


def test_hierarchy_and_shallow_variant():
    ds = anynet.synth_dataset(seed=6, n=40, classes=4, image_size=16, coarse_groups=2)
    assert ds.hierarchy.levels == 2
    assert ds.hierarchy.level_classes == [4, 2]
    assert ds.level_labels(0)[0] == ds.label(0)

    trunk = anynet.ArchConfig(
        family="plain", blocks=3, width=8, bottleneck=1, cardinality=2, scales=1, classes=4
    )
    shallow = anynet.build_shallow_exit_variant(trunk, seed=6)
    assert shallow.config.family == "shallow-exit"
    assert shallow.config.subnetworks == 2  # one exit per block after the first
    x = np.zeros((1, 3, 16, 16))
    assert shallow.forward(x, k=1).shape == (1, 4)


def test_config_errors_are_value_errors():
    with pytest.raises(ValueError):
        anynet.ArchConfig(family="no-such-family")
    with pytest.raises(ValueError):
        # channel split requires width divisible by the sub-network count
        anynet.ArchConfig(family="inclusive-sparse", width=9, bottleneck=1, subnetworks=2)


def test_gradient_battery_is_clean():
    checks = anynet.gradient_battery(seed=2)
    assert len(checks) >= 10
    assert max(err for _, err, _ in checks) < 1e-4
