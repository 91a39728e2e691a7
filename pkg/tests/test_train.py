import numpy as np
import pytest

from coil2coil.network import NetworkConfig, init_network
from coil2coil.pairs import TrainingPair, combine_all
from coil2coil.simulate import (
    CoilSpec,
    NoiseSpec,
    make_mask,
    make_noise_covariance,
    make_phantom,
    make_sensitivities,
    random_phantom_spec,
    synthesize_acquisition,
)
from coil2coil.train import (
    SliceData,
    TrainConfig,
    c2c_loss,
    denoise,
    denoise_image,
    denoise_two_group_average,
    train,
    validate,
)


def random_pair(rng, shape=(6, 6)):
    mask = np.zeros(shape, bool)
    mask[1:-1, 1:-1] = True
    return TrainingPair(
        image_in=rng.uniform(0.5, 2.0, shape),
        image_label=rng.uniform(0.5, 2.0, shape),
        sens_in=rng.uniform(0.5, 1.5, shape),
        sens_label=rng.uniform(0.5, 1.5, shape),
        mask=mask,
    )


def tiny_slices(n=4, grid=16, m=4, sigma=0.5, seed=0, with_second=False):
    rng = np.random.default_rng(seed)
    slices = []
    for _ in range(n):
        phantom = make_phantom(random_phantom_spec(grid, rng))
        mask = make_mask(phantom)
        sens = make_sensitivities(CoilSpec.ring(m), phantom.shape)
        psi = make_noise_covariance(sens, phantom, mask, NoiseSpec(sigma=sigma), rng)
        stack = synthesize_acquisition(phantom, sens, psi, rng)
        clean = combine_all(sens * phantom[None], sens)
        stack_b = synthesize_acquisition(phantom, sens, psi, rng) if with_second else None
        slices.append(SliceData(stack=stack, sens=sens, psi=psi, mask=mask, clean=clean, stack_b=stack_b))
    return slices


def identity_params(depth=3, features=2):
    params = init_network(NetworkConfig(depth=depth, features=features), np.random.default_rng(0))
    params.weights[-1][:] = 0.0
    params.biases[-1][:] = 0.0
    return params


class TestLoss:
    def test_zero_at_consistent_prediction(self):
        # pred = (S_in / S_label) * label makes the weighted residual vanish
        pair = random_pair(np.random.default_rng(0))
        pred = pair.sens_in * pair.image_label / pair.sens_label
        loss, grad = c2c_loss(pred, pair)
        assert loss == pytest.approx(0.0, abs=1e-24)
        assert np.allclose(grad, 0.0, atol=1e-12)

    def test_unnormalized_is_masked_mse(self):
        pair = random_pair(np.random.default_rng(1))
        pred = np.random.default_rng(2).uniform(0.5, 2.0, pair.image_in.shape)
        loss, _ = c2c_loss(pred, pair, normalize=False)
        want = np.mean((pred[pair.mask] - pair.image_label[pair.mask]) ** 2)
        assert loss == pytest.approx(want, rel=1e-12)

    def test_gradient_finite_difference(self):
        pair = random_pair(np.random.default_rng(3), shape=(4, 4))
        pred = np.random.default_rng(4).uniform(0.5, 2.0, (4, 4))
        _, grad = c2c_loss(pred, pair)
        h = 1e-6
        for r in range(4):
            for c in range(4):
                pp, pm = pred.copy(), pred.copy()
                pp[r, c] += h
                pm[r, c] -= h
                num = (c2c_loss(pp, pair)[0] - c2c_loss(pm, pair)[0]) / (2 * h)
                assert grad[r, c] == pytest.approx(num, abs=1e-6)

    def test_empty_mask_rejected(self):
        pair = random_pair(np.random.default_rng(5))
        bad = TrainingPair(
            pair.image_in, pair.image_label, pair.sens_in, pair.sens_label,
            np.zeros_like(pair.mask),
        )
        with pytest.raises(ValueError):
            c2c_loss(pair.image_in, bad)


class TestTrainLoop:
    def test_zero_lr_leaves_weights_unchanged(self):
        slices = tiny_slices(n=2)
        net_cfg = NetworkConfig(depth=3, features=2)
        cfg = TrainConfig(epochs=1, batch_size=2, base_lr=0.0, seed=0)
        params, _, _ = train(slices, net_cfg, cfg)
        ref = init_network(net_cfg, np.random.default_rng(0))
        for (_, a), (_, b) in zip(params.flat(), ref.flat()):
            assert np.array_equal(a, b)

    def test_same_seed_is_deterministic(self):
        slices = tiny_slices(n=3)
        net_cfg = NetworkConfig(depth=3, features=2)
        cfg = TrainConfig(epochs=2, batch_size=2, base_lr=1e-3, seed=7)
        p1, log1, _ = train(slices, net_cfg, cfg)
        p2, log2, _ = train(slices, net_cfg, cfg)
        assert log1.losses == log2.losses
        for (_, a), (_, b) in zip(p1.flat(), p2.flat()):
            assert np.array_equal(a, b)

    def test_splits_resampled_every_epoch(self):
        slices = tiny_slices(n=2, m=8)
        net_cfg = NetworkConfig(depth=3, features=2)
        cfg = TrainConfig(epochs=10, batch_size=2, base_lr=1e-4, seed=0)
        _, _, splits = train(slices, net_cfg, cfg)
        assert len(splits) == 20
        distinct = {(s.group_j, s.group_k) for s in splits}
        assert len(distinct) >= 5

    def test_loss_decreases(self):
        slices = tiny_slices(n=4, sigma=0.5)
        net_cfg = NetworkConfig(depth=3, features=4)
        cfg = TrainConfig(epochs=10, batch_size=4, base_lr=1e-3, mode="N2CL", seed=0)
        _, log, _ = train(slices, net_cfg, cfg)
        assert log.losses[-1] < log.losses[0]

    def test_missing_data_per_mode(self):
        slices = tiny_slices(n=2)
        for s in slices:
            s.clean = None
        net_cfg = NetworkConfig(depth=3, features=2)
        with pytest.raises(ValueError, match="N2N"):
            train(slices, net_cfg, TrainConfig(epochs=1, mode="N2N"))
        with pytest.raises(ValueError, match="N2CL"):
            train(slices, net_cfg, TrainConfig(epochs=1, mode="N2CL"))
        with pytest.raises(ValueError):
            train([], net_cfg, TrainConfig(epochs=1))

    def test_validation_logged(self):
        slices = tiny_slices(n=2)
        net_cfg = NetworkConfig(depth=3, features=2)
        cfg = TrainConfig(epochs=2, batch_size=2, base_lr=1e-4, validate_every=1, seed=0)
        _, log, _ = train(slices, net_cfg, cfg, val_slices=slices)
        assert len(log.val_psnrs) == 2
        assert all(np.isfinite(v) for v in log.val_psnrs)
        rows = log.rows()
        assert len(rows) == 2 and rows[0][0] == 0


class TestInference:
    def test_identity_network_passthrough(self):
        params = identity_params()
        slices = tiny_slices(n=1)
        data = slices[0]
        out = denoise(params, data.stack, data.sens, mask=data.mask)
        assert np.allclose(out, combine_all(data.stack, data.sens), rtol=1e-12)

    def test_denoise_image_agrees_with_denoise(self):
        rng = np.random.default_rng(6)
        params = init_network(NetworkConfig(depth=3, features=2), rng)
        data = tiny_slices(n=1)[0]
        a = denoise(params, data.stack, data.sens, mask=data.mask)
        b = denoise_image(params, combine_all(data.stack, data.sens), mask=data.mask)
        assert np.array_equal(a, b)

    def test_two_group_identity_noise_free(self):
        # identity network, no noise: both rescaled halves equal the full
        # combination, so the average matches plain inference exactly
        params = identity_params()
        rng = np.random.default_rng(7)
        phantom = make_phantom(random_phantom_spec(16, rng))
        sens = make_sensitivities(CoilSpec.ring(4), phantom.shape)
        stack = sens * phantom[None]
        mask = make_mask(phantom)
        out = denoise_two_group_average(params, stack, sens, np.random.default_rng(0), mask=mask)
        want = denoise(params, stack, sens, mask=mask)
        assert np.allclose(out[mask], want[mask], rtol=1e-8)

    def test_two_group_needs_channels(self):
        params = identity_params()
        with pytest.raises(ValueError):
            denoise_two_group_average(
                params, np.ones((1, 8, 8), complex), np.ones((1, 8, 8), complex),
                np.random.default_rng(0),
            )

    def test_validate_returns_mean_psnr(self):
        params = identity_params()
        slices = tiny_slices(n=3, sigma=0.2)
        from coil2coil.metrics import psnr

        want = np.mean([
            psnr(combine_all(s.stack, s.sens), s.clean, s.mask) for s in slices
        ])
        assert validate(params, slices) == pytest.approx(want, rel=1e-9)
