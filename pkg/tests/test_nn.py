import numpy as np
import pytest

from gibbs_prune.hamiltonians import LINEAR_SQUARE
from gibbs_prune.masks import converged_mask_unstructured, is_neighbourhood_uniform, conv_partition
from gibbs_prune.nn.checkpoint import load_checkpoint, restore_checkpoint, save_checkpoint
from gibbs_prune.nn.data import (
    DatasetSplit,
    augment,
    load_cifar10_binary,
    nearest_template_accuracy,
    synthetic_dataset,
)
from gibbs_prune.nn.layers import (
    BatchNorm,
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    MaxPool2,
    ReLU,
    Residual,
    softmax_cross_entropy,
)
from gibbs_prune.nn.models import MODELS, build_model
from gibbs_prune.nn.network import Network, backward, forward
from gibbs_prune.nn.optim import Adam, adam_step
from gibbs_prune.nn.train import (
    GibbsPruner,
    PruneConfig,
    evaluate,
    run_epochs,
    train_and_prune,
)
from gibbs_prune.rng import RandomSource
from gibbs_prune.schedules import BetaSchedule, LrSchedule

EPS = 1e-6
TOL = 1e-4


def rel_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-6)))


def numeric_grad(f, arr):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + EPS
        hi = f()
        arr[i] = old - EPS
        lo = f()
        arr[i] = old
        g[i] = (hi - lo) / (2 * EPS)
    return g


def check_layer(layer, x, training=True):
    """Finite-difference check of d(sum(y * r))/dx and every parameter gradient."""
    gen = np.random.default_rng(0)
    y, _ = layer.forward(x, training)
    r = gen.normal(size=y.shape)

    def loss():
        return float(np.sum(layer.forward(x, training)[0] * r))

    _, cache = layer.forward(x, training)
    dx, grads = layer.backward(cache, r)
    assert rel_error(dx, numeric_grad(loss, x)) < TOL
    params = {k: v for k, v in layer.params.items()}
    for child in layer.children():
        params.update({f"{child.name}.{k}": v for k, v in child.params.items()})
    for key, value in params.items():
        assert rel_error(grads[key], numeric_grad(loss, value)) < TOL, key
    return grads


def random_mask(shape, seed):
    return np.where(np.random.default_rng(seed).random(shape) < 0.5, -1, 1).astype(np.int8)


GEN = np.random.default_rng(42)


class TestGradients:
    @pytest.mark.parametrize("masked", [False, True])
    @pytest.mark.parametrize("k", [1, 3])
    def test_conv(self, masked, k):
        layer = Conv2d("c", k, 2, 3, np.random.default_rng(1))
        layer.params["b"] = np.random.default_rng(2).normal(size=3)
        if masked:
            layer.mask = random_mask(layer.params["w"].shape, 3)
        grads = check_layer(layer, GEN.normal(size=(2, 5, 4, 2)))
        if masked:
            assert np.all(grads["w"][layer.mask == -1] == 0.0)

    @pytest.mark.parametrize("masked", [False, True])
    def test_dense(self, masked):
        layer = Dense("d", 6, 4, np.random.default_rng(4))
        if masked:
            layer.mask = random_mask((6, 4), 5)
        grads = check_layer(layer, GEN.normal(size=(3, 6)))
        if masked:
            assert np.all(grads["w"][layer.mask == -1] == 0.0)

    def test_relu(self):
        x = GEN.normal(size=(2, 3, 3, 2))
        x[np.abs(x) < 0.05] = 0.5  # keep clear of the kink
        check_layer(ReLU(), x)

    def test_maxpool(self):
        x = GEN.permutation(64).reshape(2, 4, 4, 2) / 10.0  # distinct values, no ties
        check_layer(MaxPool2(), x)

    def test_gap_and_flatten(self):
        check_layer(GlobalAvgPool(), GEN.normal(size=(2, 3, 4, 2)))
        check_layer(Flatten(), GEN.normal(size=(2, 3, 4, 2)))

    @pytest.mark.parametrize("training", [True, False])
    def test_batchnorm(self, training):
        bn = BatchNorm("bn", 3)
        bn.params["gamma"] = GEN.normal(size=3)
        bn.params["beta"] = GEN.normal(size=3)
        bn.running_mean, bn.running_var = GEN.normal(size=3), GEN.random(3) + 0.5
        momentum = bn.momentum
        bn.momentum = 1.0  # freeze running moments during the check
        check_layer(bn, GEN.normal(size=(4, 2, 2, 3)), training)
        bn.momentum = momentum

    @pytest.mark.parametrize("masked", [False, True])
    @pytest.mark.parametrize("projection", [False, True])
    def test_residual(self, masked, projection):
        gen = np.random.default_rng(6)
        body = [Conv2d("r_c1", 3, 2, 2, gen), ReLU("r_relu"), Conv2d("r_c2", 3, 2, 2, gen)]
        shortcut = Conv2d("r_proj", 1, 2, 2, gen) if projection else None
        block = Residual("r", body, shortcut)
        if masked:
            for layer in (body[0], body[2]) + ((shortcut,) if shortcut else ()):
                layer.mask = random_mask(layer.params["w"].shape, 7)
        x = GEN.normal(size=(2, 4, 4, 2))
        y, cache = block.forward(x)
        r = np.random.default_rng(0).normal(size=y.shape)

        def loss():
            return float(np.sum(block.forward(x)[0] * r))

        _, cache = block.forward(x)
        dx, grads = block.backward(cache, r)
        assert rel_error(dx, numeric_grad(loss, x)) < TOL
        for child in block.children():
            for k, v in child.params.items():
                g = grads[f"{child.name}.{k}"]
                assert rel_error(g, numeric_grad(loss, v)) < TOL
                if masked and k == "w":
                    assert np.all(g[child.mask == -1] == 0.0)

    def test_softmax_cross_entropy(self):
        logits = GEN.normal(size=(5, 4))
        labels = np.array([0, 3, 1, 1, 2])
        loss, d = softmax_cross_entropy(logits, labels)
        p = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
        assert loss == pytest.approx(-np.log(p[np.arange(5), labels]).mean())
        assert rel_error(d, numeric_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits)) < TOL

    @pytest.mark.parametrize("name", MODELS)
    def test_whole_network(self, name):
        # small nets, every parameter checked through the full loss
        net = build_model(name, (4, 4, 1), 3, np.random.default_rng(8))
        for i, layer in enumerate(net.maskable().values()):
            layer.mask = random_mask(layer.params["w"].shape, 10 + i)
        x = np.random.default_rng(9).normal(size=(6, 4, 4, 1))
        labels = np.array([0, 1, 2, 0, 1, 2])
        # batch statistics only: keep running moments out of the picture
        for bn in net.batchnorms().values():
            bn.momentum = 1.0
        loss, grads, _ = net.loss_and_grads(x, labels)
        params = net.parameters()
        for key, value in params.items():
            num = numeric_grad(lambda: net.loss_and_grads(x, labels)[0], value)
            assert rel_error(grads[key], num) < TOL, key
        for name_, layer in net.maskable().items():
            assert np.all(grads[f"{name_}.w"][layer.mask == -1] == 0.0)

    def test_l1_penalty(self):
        net = Network([Flatten(), Dense("fc", 10, 1, np.random.default_rng(0), bias=False)], pruned=["fc"])
        w = net.maskable()["fc"].params["w"]
        w[:] = np.linspace(-1, 1, 10)[:, None] + 0.05
        x = np.ones((1, 1, 10, 1))
        plain, g0, _ = net.loss_and_grads(x, np.array([0]))
        total, g1, _ = net.loss_and_grads(x, np.array([0]), l1_penalty=0.001, l1_layers=["fc"])
        assert total - plain == pytest.approx(0.001 * np.abs(w).sum())
        assert total - plain == pytest.approx(0.001 * 50 / 9, abs=1e-12)
        np.testing.assert_allclose(g1["fc.w"] - g0["fc.w"], 0.001 * np.sign(w))


class TestForward:
    def net(self):
        gen = np.random.default_rng(11)
        return Network([Conv2d("c1", 3, 1, 2, gen), ReLU(), Conv2d("c2", 3, 2, 2, gen),
                        GlobalAvgPool(), Dense("fc", 2, 3, gen)], pruned=["c2"])

    def test_all_keep_mask_is_transparent(self):
        net = self.net()
        x = GEN.normal(size=(3, 5, 5, 1))
        ref, _ = net.forward(x)
        net.set_masks({"c2": np.ones(36, np.int8), "fc": np.ones(6, np.int8)})
        out, _ = net.forward(x)
        np.testing.assert_array_equal(out, ref)

    def test_all_prune_mask_zeroes_layer(self):
        net = self.net()
        layer = net.maskable()["c2"]
        layer.params["b"][:] = [0.25, -0.5]
        net.set_masks({"c2": -np.ones(36, np.int8)})
        y, _ = layer.forward(GEN.normal(size=(1, 5, 5, 2)))
        np.testing.assert_array_equal(y, np.broadcast_to([0.25, -0.5], y.shape))
        assert np.any(layer.params["w"] != 0)  # stored weights untouched

    def test_matches_hand_rolled_reference(self):
        net = self.net()
        mask = random_mask(36, 12)
        net.set_masks({"c2": mask})
        x = GEN.normal(size=(2, 5, 5, 1))
        layers = net.maskable()

        def conv(inp, w, b):
            k = w.shape[0]
            p = k // 2
            padded = np.pad(inp, ((0, 0), (p, p), (p, p), (0, 0)))
            out = np.zeros(inp.shape[:3] + (w.shape[3],))
            for n in range(inp.shape[0]):
                for i in range(inp.shape[1]):
                    for j in range(inp.shape[2]):
                        for o in range(w.shape[3]):
                            out[n, i, j, o] = np.sum(padded[n, i:i + k, j:j + k, :] * w[..., o]) + b[o]
            return out

        w2 = layers["c2"].params["w"] * (mask.reshape(3, 3, 2, 2) == 1)
        h = np.maximum(conv(x, layers["c1"].params["w"], layers["c1"].params["b"]), 0)
        h = conv(h, w2, layers["c2"].params["b"]).mean(axis=(1, 2))
        expected = h @ layers["fc"].params["w"] + layers["fc"].params["b"]
        logits, cache = forward(net, x)
        np.testing.assert_allclose(logits, expected, atol=1e-10)
        grads = backward(net, (logits, cache), np.array([0, 2]))
        assert np.all(grads["c2.w"].ravel()[mask == -1] == 0)

    def test_set_masks_validates_size(self):
        with pytest.raises(ValueError):
            self.net().set_masks({"c2": np.ones(5, np.int8)})

    def test_unique_names(self):
        gen = np.random.default_rng(0)
        with pytest.raises(ValueError):
            Network([Dense("a", 2, 2, gen), Dense("a", 2, 2, gen)])


class TestAdam:
    def test_zero_gradient(self):
        params = {"w": np.array([1.0, -2.0])}
        Adam().step(params, {"w": np.zeros(2)}, 0.1)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_first_step_is_signed_lr(self):
        params = {"w": np.zeros(3)}
        adam_step(Adam(), params, {"w": np.array([0.3, -5.0, 2e-3])}, 0.01)
        np.testing.assert_allclose(params["w"], [-0.01, 0.01, -0.01], rtol=1e-4)

    def test_two_step_trace(self):
        # hand trace with g1 = 1, g2 = 3, lr = 0.1
        params = {"w": np.array([0.0])}
        opt = Adam()
        opt.step(params, {"w": np.array([1.0])}, 0.1)
        opt.step(params, {"w": np.array([3.0])}, 0.1)
        m = 0.9 * 0.1 + 0.1 * 3.0
        v = 0.999 * 0.001 + 0.001 * 9.0
        step2 = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        step1 = 0.1 * 1.0 / (1.0 + 1e-8)
        assert params["w"][0] == pytest.approx(-(step1 + step2), rel=1e-12)


class TestData:
    def test_cifar_records(self, tmp_path):
        gen = np.random.default_rng(0)
        labels = np.array([3, 9, 0], dtype=np.uint8)
        pixels = gen.integers(0, 256, (3, 3, 32, 32), dtype=np.uint8)
        raw = np.concatenate([np.concatenate(([l], p.ravel())) for l, p in zip(labels, pixels)])
        path = tmp_path / "batch.bin"
        path.write_bytes(raw.astype(np.uint8).tobytes())
        split = load_cifar10_binary(path)
        assert split.images.shape == (3, 32, 32, 3)
        np.testing.assert_array_equal(split.labels, labels)
        np.testing.assert_allclose(split.images[1, 4, 7], pixels[1, :, 4, 7] / 255.0)
        assert split.images.min() >= 0 and split.images.max() <= 1

    def test_cifar_full_batch_size(self, tmp_path):
        path = tmp_path / "data_batch_1.bin"
        path.write_bytes(bytes(30_730_000))
        split = load_cifar10_binary(path)
        assert len(split) == 10_000 and path.stat().st_size == 10_000 * 3073

    def test_cifar_errors(self, tmp_path):
        bad = tmp_path / "short.bin"
        bad.write_bytes(bytes(3072))
        with pytest.raises(ValueError, match="multiple"):
            load_cifar10_binary(bad)
        label = tmp_path / "label.bin"
        label.write_bytes(bytes([10]) + bytes(3072))
        with pytest.raises(ValueError, match="label"):
            load_cifar10_binary(label)

    def test_synthetic(self):
        a, b = synthetic_dataset(3, 20), synthetic_dataset(3, 20)
        np.testing.assert_array_equal(a[0].images, b[0].images)
        np.testing.assert_array_equal(a[1].labels, b[1].labels)
        assert a[0].images.shape == (64, 8, 8, 1) and len(a[1]) == 16
        clean = synthetic_dataset(0, 25, noise=0.0)
        assert nearest_template_accuracy(clean[0]) == 1.0
        # reference score of the default noise level, seed 0
        assert nearest_template_accuracy(synthetic_dataset(0, 250)[1]) == 0.86

    def test_split_validation(self):
        with pytest.raises(ValueError):
            DatasetSplit(np.zeros((2, 4, 4, 1)), [0, 4], 4)

    def test_augment(self):
        img = np.random.default_rng(1).random((32, 32, 3))
        np.testing.assert_array_equal(augment(img, None, shift=(0, 0), flip=False), img)
        flipped = augment(img, None, shift=(0, 0), flip=True)
        np.testing.assert_array_equal(augment(flipped, None, shift=(0, 0), flip=True), img)
        shifted = augment(img, None, shift=(2, -1), flip=False)
        np.testing.assert_array_equal(shifted[2:, :-1], img[:-2, 1:])
        assert np.all(shifted[:2] == 0) and np.all(shifted[:, -1] == 0)

    def test_augment_range(self):
        img = np.zeros((32, 32, 1))
        img[16, 16] = 1.0
        gen = np.random.default_rng(2)
        offsets = set()
        for _ in range(400):
            out = augment(img, gen, flip=False)
            y, x = np.argwhere(out[..., 0] == 1)[0]
            offsets.add((y - 16, x - 16))
        assert {dy for dy, _ in offsets} == set(range(-3, 4))
        assert {dx for _, dx in offsets} == set(range(-3, 4))


def tiny_data(seed=0):
    return synthetic_dataset(seed, 12)


class TestTraining:
    def test_evaluate_chance_and_memorization(self):
        train, _ = synthetic_dataset(0, 50)
        net = build_model("toy-mlp", (8, 8, 1), 4, np.random.default_rng(0))
        random_labels = DatasetSplit(train.images, np.random.default_rng(1).integers(0, 4, len(train)), 4)
        assert abs(evaluate(net, random_labels) - 0.25) < 0.08
        few = train.subset(8)
        run_epochs(net, few, few, 150, LrSchedule(1e-2, drop_epoch=10**6), RandomSource(0), batch_size=8)
        assert evaluate(net, few) == 1.0

    def test_p_zero_matches_plain_training(self):
        train, test = tiny_data()
        lr = LrSchedule(drop_epoch=2, drop_interval=1)
        a = build_model("toy-cnn", (8, 8, 1), 4, RandomSource(0).generator())
        b = build_model("toy-cnn", (8, 8, 1), 4, RandomSource(0).generator())
        cfg = {n: PruneConfig(p=0.0) for n in a.pruned}
        _, masks, hist = train_and_prune(a, (train, test), cfg, BetaSchedule(), lr, 3, RandomSource(1))
        plain = run_epochs(b, train, test, 3, lr, RandomSource(1), configs=cfg)
        assert [r["train_loss"] for r in hist[:-1]] == [r["train_loss"] for r in plain]
        for k, v in a.parameters().items():
            np.testing.assert_array_equal(v, b.parameters()[k])
        assert all(np.all(m == 1) for m in masks.values())

    def test_frozen_cold_beta_is_hard_pruning(self):
        train, test = tiny_data()
        lr = LrSchedule()
        a = build_model("toy-mlp", (8, 8, 1), 4, RandomSource(0).generator())
        b = build_model("toy-mlp", (8, 8, 1), 4, RandomSource(0).generator())
        cfg = {n: PruneConfig(p=0.5) for n in a.pruned}
        cold = BetaSchedule(1e12, 1e12, 1)
        train_and_prune(a, (train, test), cfg, cold, lr, 2, RandomSource(2), batch_size=16)
        # reference: same loop, mask = converged mask of the current weights before every step
        opt, params = Adam(), b.parameters()
        layers = b.maskable()
        for epoch in range(2):
            order = RandomSource(2).child("shuffle", epoch).generator().permutation(len(train))
            for s in range(0, len(train), 16):
                idx = order[s:s + 16]
                b.set_masks({n: converged_mask_unstructured(0.5, layers[n].params["w"]) for n in cfg})
                _, grads, _ = b.loss_and_grads(train.images[idx], train.labels[idx])
                opt.step(params, grads, 1e-3)
        for k, v in a.parameters().items():
            np.testing.assert_allclose(v, b.parameters()[k], rtol=0, atol=0)

    @pytest.mark.parametrize("structure,hamiltonian", [
        ("unstructured", LINEAR_SQUARE),
        ("kernel", "structured-quadratic"),
        ("filter", "structured-quadratic"),
        ("filter", "structured-linear"),
        ("kernel", "binary-structured"),
    ])
    def test_final_masks(self, structure, hamiltonian):
        train, test = tiny_data()
        net = build_model("toy-cnn", (8, 8, 1), 4, RandomSource(0).generator())
        cfg = {n: PruneConfig(p=0.5, structure=structure, hamiltonian=hamiltonian, c=0.05) for n in net.pruned}
        _, masks, hist = train_and_prune(net, (train, test), cfg, BetaSchedule(anneal_epochs=1),
                                         LrSchedule(), 2, RandomSource(0))
        assert hist[-1]["phase"] == "final"
        for name, x in masks.items():
            w = net.maskable()[name].params["w"]
            assert np.count_nonzero(x == -1) == w.size // 2
            if structure != "unstructured":
                assert is_neighbourhood_uniform(x, conv_partition(w.shape, structure))
            assert hist[-1][f"cvg_agreement.{name}"] == 1.0

    def test_thread_count_does_not_change_results(self):
        train, test = tiny_data()
        runs = []
        for threads in (1, 3):
            net = build_model("small-resnet", (8, 8, 1), 4, RandomSource(0).generator())
            cfg = {n: PruneConfig() for n in net.pruned}
            _, masks, hist = train_and_prune(net, (train, test), cfg, BetaSchedule(anneal_epochs=2),
                                             LrSchedule(), 2, RandomSource(5), threads=threads,
                                             clock=lambda: 0.0)
            runs.append((hist, masks))
        assert runs[0][0] == runs[1][0]
        for k in runs[0][1]:
            np.testing.assert_array_equal(runs[0][1][k], runs[1][1][k])

    def test_rebuild_every(self):
        net = build_model("toy-mlp", (8, 8, 1), 4, RandomSource(0).generator())
        pruner = GibbsPruner(net, {"fc1": PruneConfig(rebuild_every=3)}, BetaSchedule())
        pruner.sample(0, 0, RandomSource(0))
        spec = pruner._specs["fc1"]
        net.maskable()["fc1"].params["w"] *= 2
        pruner.sample(0, 1, RandomSource(0))
        assert pruner._specs["fc1"] is spec
        pruner.sample(0, 3, RandomSource(0))
        assert pruner._specs["fc1"] is not spec

    @pytest.mark.parametrize("kwargs", [
        dict(p=1.5), dict(structure="channel"), dict(hamiltonian="linear-square", structure="kernel"),
        dict(hamiltonian="structured-quadratic"), dict(rebuild_every=0),
    ])
    def test_prune_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            PruneConfig(**kwargs)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        gen = np.random.default_rng(0)
        net = build_model("small-resnet", (8, 8, 1), 4, gen)
        for bn in net.batchnorms().values():
            bn.running_mean = gen.normal(size=bn.running_mean.shape)
        masks = {n: random_mask(net.maskable()[n].params["w"].size, 1) for n in net.pruned}
        path = tmp_path / "ckpt.bin"
        save_checkpoint(net, path, masks)
        params, states, loaded = load_checkpoint(path)
        for k, v in net.parameters().items():
            np.testing.assert_array_equal(params[k], v)
        for k in masks:
            np.testing.assert_array_equal(loaded[k], masks[k])
        other = build_model("small-resnet", (8, 8, 1), 4, np.random.default_rng(9))
        restore_checkpoint(other, path)
        x = gen.normal(size=(2, 8, 8, 1))
        net.set_masks(masks)
        np.testing.assert_array_equal(net.forward(x)[0], other.forward(x)[0])
        assert path.read_bytes().startswith(b"GIBBS-CKPT 1\n")

    def test_corrupt(self, tmp_path):
        net = build_model("toy-mlp", (8, 8, 1), 4, np.random.default_rng(0))
        path = tmp_path / "ckpt.bin"
        save_checkpoint(net, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(path)
        path.write_bytes(b"NOT-A-CKPT\nend\n")
        with pytest.raises(ValueError):
            load_checkpoint(path)
