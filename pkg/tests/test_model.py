import numpy as np
import pytest

from scgt.model import (
    block_sums,
    load_instance,
    observe_pooled,
    observe_qgt,
    prior_block_sums,
    rescale_qgt,
    sample_pooled_signal,
    sample_qgt_signal,
    save_instance,
)


class TestSignals:
    def test_qgt_signal(self):
        b = sample_qgt_signal(20000, 0.3, seed=1)
        assert set(np.unique(b)) <= {0.0, 1.0}
        np.testing.assert_allclose(b.mean(), 0.3, atol=0.015)

    def test_pooled_signal_one_hot(self):
        B = sample_pooled_signal(3000, [0.2, 0.3, 0.5], seed=2)
        np.testing.assert_array_equal(B.sum(axis=1), 1.0)
        np.testing.assert_allclose(B.mean(axis=0), [0.2, 0.3, 0.5], atol=0.03)

    def test_pi_validation(self):
        with pytest.raises(ValueError):
            sample_pooled_signal(10, [0.5, 0.6])
        with pytest.raises(ValueError):
            sample_qgt_signal(10, 1.5)


class TestObservation:
    def test_noiseless_rescaled_equals_xt_beta(self, small_design):
        beta = sample_qgt_signal(small_design.p, 0.3, seed=4)
        inst = observe_qgt(small_design, beta, 0.0, seed=0)
        np.testing.assert_array_equal(inst.y, np.round(inst.y))
        np.testing.assert_allclose(inst.yt, small_design.matvec(beta), atol=1e-10)
        assert inst.d == int(beta.sum())

    def test_rescaled_noise_second_moment(self, iid_design):
        beta = sample_qgt_signal(iid_design.p, 0.3, seed=5)
        inst = observe_qgt(iid_design, beta, 0.04, seed=1)
        noise = inst.yt - iid_design.matvec(beta)
        np.testing.assert_allclose(np.mean(noise ** 2), 0.04, rtol=0.25)
        np.testing.assert_allclose(inst.sigma2, 0.04)

    def test_raw_noise_mapping(self, iid_design):
        # raw variance p sigma^2 on an i.i.d. design rescales to sigma^2 / (delta alpha (1 - alpha))
        beta = sample_qgt_signal(iid_design.p, 0.3, seed=5)
        s2 = 0.0016
        inst = observe_qgt(iid_design, beta, iid_design.p * s2, noise_scaling="raw", seed=1)
        np.testing.assert_allclose(inst.sigma2, s2 / (iid_design.delta * 0.25), rtol=1e-12)

    def test_prior_sums(self, small_design):
        beta = sample_qgt_signal(small_design.p, 0.3, seed=6)
        inst = observe_qgt(small_design, beta, 0.0, sums="prior", pi=0.3)
        np.testing.assert_allclose(inst.sums, small_design.cols_per_block * 0.3)
        np.testing.assert_allclose(prior_block_sums(small_design, 0.3), inst.sums)
        # the offset error is alpha W (S - S_hat) per row block
        exact = rescale_qgt(small_design, inst.y, block_sums(small_design, beta))
        assert np.abs(exact - inst.yt).max() > 0

    def test_pooled_rows(self, small_design):
        B = sample_pooled_signal(small_design.p, [0.3, 0.3, 0.4], seed=7)
        inst = observe_pooled(small_design, B, 0.0)
        np.testing.assert_allclose(inst.Y.sum(axis=1), small_design.items_per_test())
        np.testing.assert_allclose(inst.Yt, small_design.matvec(B), atol=1e-10)
        with pytest.raises(ValueError, match="one-hot"):
            observe_pooled(small_design, 0.5 * B, 0.0)

    @pytest.mark.parametrize("kind", ["qgt", "pooled"])
    def test_save_load(self, small_design, tmp_path, kind):
        if kind == "qgt":
            inst = observe_qgt(small_design, sample_qgt_signal(small_design.p, 0.3, seed=1), 0.01, seed=2)
        else:
            inst = observe_pooled(small_design, sample_pooled_signal(small_design.p, [0.5, 0.5], seed=1),
                                  0.01, seed=2)
        save_instance(inst, tmp_path / "inst")
        back = load_instance(tmp_path / "inst")
        assert type(back) is type(inst)
        for name in ("y", "yt", "beta") if kind == "qgt" else ("Y", "Yt", "B"):
            np.testing.assert_array_equal(getattr(back, name), getattr(inst, name))
