import numpy as np
import pytest

from aosr import tensor as T
from aosr.errors import ContractError, DTypeError
from aosr.gradcheck import grad_check, network_grad_check
from aosr.net import NetConfig
from aosr.tensor import Tensor


class TestHarness:
    def test_quadratic_passes(self):
        x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True, name="x")
        rep = grad_check(lambda: T.sum_(x * x * x), [x])
        assert rep.passed
        assert rep.checks[0].n_checked == 3

    def test_requires_f64(self):
        x = Tensor(np.ones(2, np.float32), requires_grad=True)
        with pytest.raises(DTypeError):
            grad_check(lambda: T.sum_(x), [x])

    def test_non_scalar_target(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(ContractError):
            grad_check(lambda: x * 2.0, [x])

    def test_nondeterministic_target(self):
        x = Tensor(np.ones(2), requires_grad=True)
        rng = np.random.default_rng(0)
        with pytest.raises(ContractError):
            grad_check(lambda: T.sum_(x * float(rng.random())), [x])

    def test_sampling_limits_entries(self):
        x = Tensor(np.random.default_rng(0).normal(size=50), requires_grad=True, name="x")
        rep = grad_check(lambda: T.sum_(T.exp(x * 0.1)), [x], max_entries=7)
        assert rep.checks[0].n_checked == 7 and rep.passed

    def test_floor_scales_with_loss(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        small = grad_check(lambda: T.sum_(x), [x]).floor
        big = grad_check(lambda: T.sum_(x) + 1e4, [x]).floor
        assert big > small

    def test_report_lines(self):
        x = Tensor(np.array([1.0]), requires_grad=True, name="weight")
        line = grad_check(lambda: T.sum_(x * x), [x]).lines()[0]
        assert line.startswith("PASS weight")


class TestNetwork:
    @pytest.mark.parametrize("placement", ["conv1_deconv2", "conv2_deconv1"])
    def test_full_network(self, placement):
        rep = network_grad_check(NetConfig(mixup_placement=placement), seed=1, max_entries=4)
        assert rep.passed, rep.lines()
        names = {c.name for c in rep.checks}
        assert "mixup.xi" in names
        assert {"enc1.slope", "res1.slope", "dec1.slope"} <= names

    def test_injected_conv_bug_is_named(self, monkeypatch):
        good = T.BACKWARD_RULES["conv2d"]

        def wrong(ctx, g):
            grads = list(good(ctx, g))
            if len(grads) == 3 and grads[2] is not None:
                grads[2] = grads[2] * 1.5
            return tuple(grads)

        monkeypatch.setitem(T.BACKWARD_RULES, "conv2d", wrong)
        rep = network_grad_check(seed=0, max_entries=2)
        assert not rep.passed
        assert all(name.endswith(".bias") for name in rep.failures)
        assert "head.bias" in rep.failures
