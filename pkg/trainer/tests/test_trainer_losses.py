import numpy as np
import pytest
import torch

import tomopet.losses as ref
from tomopet.losses import LossWeights
from tomopet.radon import RadonSpec, get_operator

import tomopet_trainer as tt


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-30)


@pytest.fixture(scope="module")
def frozen_batch():
    rng = np.random.default_rng(42)
    images = [rng.standard_normal((17, 17)) for _ in range(6)]
    gt = rng.standard_normal((17, 17))
    return images, gt


class TestKernelParity:
    def test_diversity_matches_reference(self, frozen_batch):
        images, _ = frozen_batch
        want = ref.diversity_loss(images)
        got = float(tt.diversity_loss([torch.tensor(im) for im in images]))
        assert _rel(got, want) <= 1e-5

    def test_first_moment_matches_reference(self, frozen_batch):
        images, gt = frozen_batch
        want = ref.first_moment_loss(gt, images)
        got = float(tt.first_moment_loss(
            torch.tensor(gt), [torch.tensor(im) for im in images]))
        assert _rel(got, want) <= 1e-5

    def test_consistency_matches_reference_through_transform(self, frozen_batch):
        images, gt = frozen_batch
        spec = RadonSpec(n_angles=8, n_detectors=25, detector_spacing=1.0)
        op = get_operator(spec, 17, 17, 1.0)
        want = ref.consistency_loss(op, np.abs(images[0]), np.abs(gt))
        torch_op = tt.TorchRadon(spec, 17, 17, 1.0)
        got = float(tt.consistency_loss(
            torch_op, torch.tensor(np.abs(images[0])), torch.tensor(np.abs(gt))))
        assert _rel(got, want) <= 1e-5

    def test_torch_radon_matches_operator_forward(self):
        rng = np.random.default_rng(3)
        spec = RadonSpec(n_angles=6, n_detectors=23, detector_spacing=1.3)
        op = get_operator(spec, 16, 16, 1.3)
        img = rng.random((16, 16))
        want = op.forward(img)
        got = tt.TorchRadon(spec, 16, 16, 1.3)(torch.tensor(img)).numpy()
        assert got.shape == want.shape
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_combine_matches_reference(self, frozen_batch):
        w = LossWeights()
        parts = (0.37, 1.2, 4.5, 0.08, 2.25)
        want = ref.combine_objective(*parts, w)
        got = float(tt.combine_objective(
            *[torch.tensor(p, dtype=torch.float64) for p in parts], w))
        assert _rel(got, want) <= 1e-5

    def test_combine_collapse_limit(self):
        # With zero diversity the inverted term hits its ceiling lambda_d/tau.
        w = LossWeights()
        zero = torch.tensor(0.0, dtype=torch.float64)
        got = float(tt.combine_objective(zero, zero, zero, zero, zero, w))
        assert got == w.lambda_d / w.tau == 20.0


class TestAdversarial:
    def test_generator_loss_is_softplus_of_negated_logits(self):
        logits = torch.tensor([-2.0, 0.0, 3.0], dtype=torch.float64)
        want = float(np.mean(np.log1p(np.exp(-logits.numpy()))))
        assert _rel(float(tt.adversarial_generator_loss(logits)), want) <= 1e-12

    def test_discriminator_loss_hand_values(self):
        real = torch.tensor([1.0, -1.0], dtype=torch.float64)
        fake = torch.tensor([0.5, 2.0], dtype=torch.float64)
        want = float(np.mean(np.log1p(np.exp(-real.numpy())))
                     + np.mean(np.log1p(np.exp(fake.numpy()))))
        got = float(tt.adversarial_discriminator_loss(real, fake))
        assert _rel(got, want) <= 1e-12


class TestGradientPenalty:
    def test_literal_output_norm_hand_computation(self):
        d = lambda x: (x ** 2).sum(dim=(1, 2, 3))
        x = torch.tensor([[[[1.0, 2.0]]], [[[0.5, -1.0]]]], dtype=torch.float64)
        got = float(tt.gradient_penalty(d, x, gamma=10.0,
                                        mode="literal_output_norm"))
        want = 0.5 * 10.0 * float((d(x) ** 2).mean())
        assert _rel(got, want) <= 1e-12

    def test_r1_penalty_on_quadratic_critic(self):
        # D(x) = sum(x^2) has gradient 2x, so the penalty is
        # 0.5 * gamma * E[4 * sum(x^2)].
        d = lambda x: (x ** 2).sum(dim=(1, 2, 3))
        x = torch.randn(3, 1, 4, 4, dtype=torch.float64)
        got = float(tt.gradient_penalty(d, x, gamma=10.0,
                                        mode="r1_gradient").detach())
        want = 0.5 * 10.0 * float((4 * (x ** 2).sum(dim=(1, 2, 3))).mean())
        assert _rel(got, want) <= 1e-10

    def test_unknown_mode_rejected(self):
        d = lambda x: x.sum(dim=(1, 2, 3))
        with pytest.raises(tt.TrainerError):
            tt.gradient_penalty(d, torch.randn(1, 1, 2, 2), 10.0, mode="wgan")

    def test_zero_gamma_zeroes_penalty(self):
        d = lambda x: (x ** 2).sum(dim=(1, 2, 3))
        x = torch.randn(2, 1, 3, 3, dtype=torch.float64)
        assert float(tt.gradient_penalty(d, x, 0.0, "r1_gradient").detach()) == 0.0


class TestValidation:
    def test_diversity_needs_two_samples(self):
        with pytest.raises(tt.TrainerError):
            tt.diversity_loss([torch.zeros(2, 2)])

    def test_first_moment_needs_samples(self):
        with pytest.raises(tt.TrainerError):
            tt.first_moment_loss(torch.zeros(2, 2), [])

    def test_consistency_shape_mismatch(self):
        with pytest.raises(tt.TrainerError):
            tt.consistency_loss(lambda x: x, torch.zeros(2, 2), torch.zeros(3, 3))
