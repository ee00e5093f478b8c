import numpy as np
import pytest

from aosr.errors import ConfigError, DimensionError
from aosr.gradcheck import grad_check
from aosr.losses import FeatureExtractor, LossConfig, contrastive_loss, l1_loss, objective, total_loss
from aosr.net import NetOutput
from aosr.tensor import Tensor

from test_tensor import brute_conv


def reference_features(fe, x):
    out = []
    h = x
    for w, b in fe.stages:
        h = brute_conv(h, w.data.astype(np.float64), 2, 1) + b.data[None, :, None, None]
        h = np.where(h < 0, 0.2 * h, h)
        out.append(h)
    return out


@pytest.fixture
def images():
    rng = np.random.default_rng(5)
    return [rng.random((2, 3, 8, 8)) for _ in range(3)]


class TestL1:
    def test_value(self):
        phi_p = Tensor(np.zeros((1, 3, 2, 2)))
        j_p = Tensor(np.ones((1, 3, 2, 2)))
        v = l1_loss(phi_p, np.full((1, 3, 2, 2), -2.0), j_p, np.full((1, 3, 2, 2), 0.5))
        assert v.item() == pytest.approx(2.5)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            l1_loss(Tensor(np.zeros((1, 3, 2, 2))), np.zeros((1, 3, 2, 3)), Tensor(np.zeros(1)), np.zeros(1))


class TestContrastive:
    def test_matches_reference(self, images):
        gt, pred, deg = images
        fe = FeatureExtractor(dtype="float64")
        got = contrastive_loss(gt, Tensor(pred), deg, fe).item()
        fp, fg, fn = (reference_features(fe, a) for a in (pred, gt, deg))
        want = np.mean([np.mean(np.abs(g - p)) / (np.mean(np.abs(n - p)) + 1e-8)
                        for p, g, n in zip(fp, fg, fn)])
        assert got == pytest.approx(want, rel=1e-10)

    def test_zero_at_ground_truth(self, images):
        gt, _, deg = images
        fe = FeatureExtractor(dtype="float64")
        assert contrastive_loss(gt, Tensor(gt.copy()), deg, fe).item() == 0.0

    def test_layer_weights(self, images):
        gt, pred, deg = images
        fe = FeatureExtractor(dtype="float64")
        full = [contrastive_loss(gt, Tensor(pred), deg, fe, weights=w).item()
                for w in ([1, 0, 0], [0, 1, 0], [0, 0, 1])]
        mixed = contrastive_loss(gt, Tensor(pred), deg, fe, weights=[0.2, 0.3, 0.5]).item()
        assert mixed == pytest.approx(0.2 * full[0] + 0.3 * full[1] + 0.5 * full[2], rel=1e-12)

    def test_extractor_is_frozen_and_seeded(self):
        a, b = FeatureExtractor(), FeatureExtractor()
        assert all(np.array_equal(wa.data, wb.data) for (wa, _), (wb, _) in zip(a.stages, b.stages))
        with pytest.raises(ValueError):
            a.stages[0][0].data[0, 0, 0, 0] = 1.0

    def test_too_small_input(self):
        fe = FeatureExtractor(dtype="float64")
        with pytest.raises(DimensionError):
            fe.features(np.zeros((1, 3, 4, 4)))

    def test_gradient(self, images):
        gt, pred, deg = images
        fe = FeatureExtractor(dtype="float64")
        p = Tensor(pred, requires_grad=True, name="pred")
        rep = grad_check(lambda: contrastive_loss(gt, p, deg, fe), [p], max_entries=40)
        assert rep.passed, rep.lines()


class TestTotal:
    def test_weights(self):
        cfg = LossConfig()
        v = total_loss(Tensor(np.array([2.0])), Tensor(np.array([4.0])), cfg)
        assert v.item() == pytest.approx(0.25 * 2 + 0.5 * 4)

    def test_objective_parts(self, images):
        gt, pred, deg = images
        cfg = LossConfig()
        fe = FeatureExtractor.from_config(cfg, "float64")
        out = NetOutput(Tensor(pred * 0.5), Tensor(pred))
        total, l1, lc = objective(out, pred * 0.4, gt, deg, cfg, fe)
        assert total.item() == pytest.approx(0.25 * l1.item() + 0.5 * lc.item())

    @pytest.mark.parametrize("bad", [dict(lambda1=-1.0), dict(eps=0.0), dict(layer_weights=(1.0, 2.0)),
                                     dict(fe_channels=(8, 16), fe_stages=3)])
    def test_config_validation(self, bad):
        with pytest.raises(ConfigError):
            LossConfig(**bad).validate()
