"""Loss values against straight-line oracles, hinge behavior, and
gradient correctness of every term."""

import math
import warnings

import numpy as np
import numpy.testing as npt
import pytest

from protogzsl.data import GeneratedSet
from protogzsl.losses import (LossConfig, cross_entropy_loss,
                              entropy_constraint_loss, entropy_margin_loss,
                              generated_cross_entropy_loss,
                              generated_mutual_info_loss, mutual_info_loss,
                              reg_entropy, select_generated, selection_mask,
                              semantic_preserving_loss, spce_class_values,
                              total_loss_det, total_loss_gen)
from protogzsl.ndcore import init_net, make_rng, net_backward, net_forward
from protogzsl.proto import DistanceSpec, source_set, target_set

from oracles import (reg_entropy_direct, two_class_logit_for_entropy)

LN2 = math.log(2.0)
DOT = DistanceSpec(kind="dot")


def z_for_logits(rows, p_dim=6):
    """Prototype matrix realizing given per-class dot logits for x = e1."""
    z = np.zeros((len(rows), p_dim))
    z[:, 0] = rows
    return z


def e1(n=1, p_dim=6):
    x = np.zeros((n, p_dim))
    x[:, 0] = 1.0
    return x


class TestRegEntropy:
    def test_uniform_is_ln2_for_any_k(self):
        for k in range(2, 30):
            got = reg_entropy(np.full(k, 1.0 / k))
            npt.assert_allclose(got, LN2, atol=1e-9)

    def test_one_hot_is_exactly_zero(self):
        p = np.zeros(7)
        p[2] = 1.0
        assert reg_entropy(p) == 0.0

    def test_frozen_two_class_value(self):
        npt.assert_allclose(reg_entropy(np.array([0.9, 0.1])), 0.325083,
                            atol=1e-6)
        npt.assert_allclose(reg_entropy(np.array([0.9, 0.1])),
                            reg_entropy_direct([0.9, 0.1]), rtol=1e-12)

    def test_k_below_two_rejected(self):
        with pytest.raises(ValueError, match="2"):
            reg_entropy(np.array([1.0]))

    def test_bounded_random_sweep(self):
        rng = make_rng(0)
        for _ in range(500):
            k = int(rng.integers(2, 51))
            p = rng.random(k) + 1e-9
            p /= p.sum()
            v = reg_entropy(p)
            assert 0.0 <= v <= LN2 + 1e-9


class TestCrossEntropy:
    def test_perfectly_confident_is_zero(self):
        # label-1 logit huge: p_true -> 1
        z = z_for_logits([60.0, 0.0, 0.0])
        got = cross_entropy_loss(e1(4), np.ones(4, dtype=int), z,
                                 source_set(3, 1), DOT)
        assert got < 1e-9

    def test_half_confidence_is_ln2(self):
        z = z_for_logits([1.0, 1.0])  # two equal logits -> p_true = 0.5
        got = cross_entropy_loss(e1(3), np.ones(3, dtype=int), z,
                                 source_set(2, 1), DOT)
        npt.assert_allclose(got, LN2, atol=1e-9)

    def test_nonnegative_random_sweep(self):
        rng = make_rng(1)
        for _ in range(25):
            z = rng.normal(0, 2, (4, 6))
            x = rng.normal(0, 1, (9, 6))
            y = rng.integers(1, 5, 9)
            assert cross_entropy_loss(x, y, z, source_set(4, 1), DOT) >= 0.0

    def test_label_outside_set_rejected(self):
        z = z_for_logits([1.0, 1.0])
        with pytest.raises(ValueError, match="label"):
            cross_entropy_loss(e1(1), np.array([5]), z, source_set(2, 1),
                               DOT)


class TestEntropyMargin:
    def test_one_hot_pvs_are_zero(self):
        z = z_for_logits([80.0, 0.0, 0.0])
        got = entropy_margin_loss(e1(5), z, target_set(0, 3), DOT)
        assert got == 0.0

    def test_uniform_pvs_hit_full_hinge(self):
        z = z_for_logits([0.0, 0.0])
        got = entropy_margin_loss(e1(4), z, target_set(0, 2), DOT,
                                  LossConfig(margin1=0.15))
        npt.assert_allclose(got, LN2 - 0.15, atol=1e-9)

    def test_margin_above_ln2_kills_loss(self):
        rng = make_rng(2)
        z = rng.normal(0, 1, (3, 6))
        x = rng.normal(0, 1, (10, 6))
        got = entropy_margin_loss(x, z, target_set(0, 3), DOT,
                                  LossConfig(margin1=LN2 + 0.01))
        assert got == 0.0


class TestMutualInfo:
    def test_balanced_one_hot_attains_minus_ln2(self):
        # 4 points, 2 targets, each point one-hot, marginal uniform
        z = z_for_logits([70.0, -70.0])
        x = e1(4)
        x[2:, 0] = -1.0  # flips which class wins the dot
        got = mutual_info_loss(x, z, target_set(0, 2), DOT)
        npt.assert_allclose(got, -LN2, atol=1e-6)

    def test_uniform_pvs_frozen_value(self):
        z = z_for_logits([0.0, 0.0])
        got = mutual_info_loss(e1(4), z, target_set(0, 2), DOT,
                               LossConfig(lambda0=1.0, margin1=0.15))
        npt.assert_allclose(got, -0.15, atol=1e-9)

    def test_single_repeated_one_hot_is_zero(self):
        z = z_for_logits([70.0, 0.0])
        got = mutual_info_loss(e1(4), z, target_set(0, 2), DOT)
        npt.assert_allclose(got, 0.0, atol=1e-6)

    def test_batch_below_two_rejected(self):
        z = z_for_logits([0.0, 0.0])
        with pytest.raises(ValueError, match="batch"):
            mutual_info_loss(e1(1), z, target_set(0, 2), DOT)


class TestEntropyConstraint:
    @staticmethod
    def instance(r_u, r_s):
        """x=e1 over two source and two target prototypes whose PVs have
        regularized entropies exactly r_s and r_u (bisection oracle)."""
        gap_s = two_class_logit_for_entropy(r_s)
        gap_u = two_class_logit_for_entropy(r_u)
        z = np.zeros((4, 6))
        z[0, 0] = gap_s   # source ids 1,2
        z[2, 0] = gap_u   # target ids 3,4
        return e1(1), z

    def test_satisfied_constraint_is_zero(self):
        x, z = self.instance(r_u=0.2, r_s=0.1)
        got = entropy_constraint_loss(x, z, source_set(2, 2),
                                      target_set(2, 2), DOT,
                                      LossConfig(margin2=0.05))
        npt.assert_allclose(got, 0.0, atol=1e-9)

    def test_violated_constraint_frozen_value(self):
        x, z = self.instance(r_u=0.1, r_s=0.2)
        got = entropy_constraint_loss(x, z, source_set(2, 2),
                                      target_set(2, 2), DOT,
                                      LossConfig(margin2=0.05))
        npt.assert_allclose(got, 0.15, atol=1e-6)

    def test_zero_margin_boundary(self):
        x, z = self.instance(r_u=0.3, r_s=0.3)
        got = entropy_constraint_loss(x, z, source_set(2, 2),
                                      target_set(2, 2), DOT,
                                      LossConfig(margin2=0.0))
        npt.assert_allclose(got, 0.0, atol=1e-9)


class TestSemanticPreserving:
    def test_uniform_mapped_pv_frozen_value(self):
        # zero net -> all embedded prototypes equal -> visual-space PV
        # uniform -> CE = ln S regardless of the attribute-space PV
        from protogzsl.ndcore import EmbedNet
        net = EmbedNet(np.zeros((5, 4)), np.zeros(4), np.zeros((4, 6)),
                       np.zeros(6))
        v = make_rng(3).uniform(0, 1, (6, 5))  # 4 source + 2 target classes
        z, _ = net_forward(net, v)
        got = semantic_preserving_loss(v, z, source_set(4, 2),
                                       target_set(4, 2), DOT,
                                       LossConfig(margin3=0.3))
        npt.assert_allclose(got, LN2 - 0.3, atol=1e-9)

    def test_large_margin_kills_loss(self):
        rng = make_rng(4)
        net = init_net(5, 6, hidden=8, rng=rng)
        v = rng.uniform(0, 1, (6, 5))
        z, _ = net_forward(net, v)
        got = semantic_preserving_loss(v, z, source_set(4, 2),
                                       target_set(4, 2), DOT,
                                       LossConfig(margin3=LN2 + 0.01))
        assert got == 0.0

    def test_class_values_floor_is_entropy(self):
        # CE >= H with equality iff the two PVs coincide; reg-CE of
        # identical PVs equals the attribute-space reg-entropy
        rng = make_rng(5)
        v = rng.uniform(0, 1, (6, 5))
        from protogzsl.losses import semantic_pv
        src, tgt = source_set(4, 2), target_set(4, 2)
        sem = semantic_pv(v, src, tgt, DOT)
        vals = spce_class_values(v, np.asarray(v), src, tgt, DOT)
        for i in range(2):
            floor = reg_entropy_direct(sem[i]) * math.log2(len(sem[i])) \
                / math.log2(4)
            npt.assert_allclose(vals[i], floor, rtol=1e-9)
        assert len(vals) == 2

    def test_single_source_class_rejected(self):
        v = make_rng(6).uniform(0, 1, (2, 5))
        with pytest.raises(ValueError, match="source"):
            semantic_preserving_loss(v, np.zeros((2, 6)), source_set(1, 1),
                                     target_set(1, 1), DOT)


class TestTotals:
    def setup_instance(self, seed=7):
        rng = make_rng(seed)
        v = rng.uniform(0, 1, (7, 5))   # 5 source, 2 target
        z = rng.normal(0, 1, (7, 6))
        x = rng.normal(0, 1, (9, 6))
        y = rng.integers(1, 6, 9)
        return x, y, v, z, source_set(5, 2), target_set(5, 2)

    def test_zero_weights_reduce_to_ce(self):
        x, y, v, z, src, tgt = self.setup_instance()
        cfg = LossConfig(lambda1=0, lambda2=0, lambda3=0)
        report, _ = total_loss_det(x, y, v, z, src, tgt, DOT, cfg)
        npt.assert_allclose(report.total,
                            cross_entropy_loss(x, y, z, src, DOT, cfg),
                            rtol=1e-12)

    def test_total_is_weighted_sum_of_terms(self):
        x, y, v, z, src, tgt = self.setup_instance()
        cfg = LossConfig(lambda1=0.3, lambda2=0.7, lambda3=0.2)
        report, _ = total_loss_det(x, y, v, z, src, tgt, DOT, cfg)
        t = report.per_term
        expect = (t["ce"] + 0.3 * t["mi"] + 0.7 * t["ec"] + 0.2 * t["spce"])
        npt.assert_allclose(report.total, expect, atol=1e-9)

    def test_gen_total_reduces_when_gammas_zero(self):
        x, y, v, z, src, tgt = self.setup_instance()
        rng = make_rng(8)
        gen = GeneratedSet(rng.normal(0, 1, (6, 6)),
                           np.array([6, 6, 7, 7, 6, 7]))
        cfg = LossConfig(gamma1=0.0, gamma2=0.0)
        rep_det, _ = total_loss_det(x, y, v, z, src, tgt, DOT, cfg)
        rep_gen, _ = total_loss_gen(x, y, gen, v, z, src, tgt, DOT, cfg)
        npt.assert_allclose(rep_gen.total, rep_det.total, rtol=1e-12)

    def test_gen_total_with_empty_set(self):
        x, y, v, z, src, tgt = self.setup_instance()
        gen = GeneratedSet(np.zeros((0, 6)), np.zeros(0, dtype=int))
        cfg = LossConfig()
        rep_det, _ = total_loss_det(x, y, v, z, src, tgt, DOT, cfg)
        rep_gen, _ = total_loss_gen(x, y, gen, v, z, src, tgt, DOT, cfg)
        npt.assert_allclose(rep_gen.total, rep_det.total, rtol=1e-12)
        assert rep_gen.flags["gen_empty"]

    def test_gen_total_sums_terms(self):
        x, y, v, z, src, tgt = self.setup_instance()
        rng = make_rng(9)
        gen = GeneratedSet(rng.normal(0, 1, (8, 6)),
                           np.array([6, 7] * 4))
        cfg = LossConfig(gamma1=0.4, gamma2=0.2)
        rep, _ = total_loss_gen(x, y, gen, v, z, src, tgt, DOT, cfg)
        t = rep.per_term
        det = (t["ce"] + cfg.lambda1 * t["mi"] + cfg.lambda2 * t["ec"]
               + cfg.lambda3 * t["spce"])
        npt.assert_allclose(rep.total,
                            det + 0.4 * t["gen_ce"] + 0.2 * t["gen_mi"],
                            atol=1e-9)


class TestSelection:
    def test_uniform_pv_rejected_at_default_margin(self):
        z = z_for_logits([0.0, 0.0])
        gen = GeneratedSet(e1(1), np.array([1]))
        kept = select_generated(gen, z, target_set(0, 2), DOT,
                                LossConfig(margin4=0.3))
        assert kept.m == 0

    def test_one_hot_pv_kept(self):
        z = z_for_logits([70.0, 0.0])
        gen = GeneratedSet(e1(1), np.array([1]))
        kept = select_generated(gen, z, target_set(0, 2), DOT,
                                LossConfig(margin4=0.01))
        assert kept.m == 1

    def test_margin_above_ln2_keeps_all(self):
        rng = make_rng(10)
        z = rng.normal(0, 1, (3, 6))
        gen = GeneratedSet(rng.normal(0, 1, (20, 6)),
                           rng.integers(1, 4, 20))
        kept = select_generated(gen, z, target_set(0, 3), DOT,
                                LossConfig(margin4=LN2 + 1e-6))
        assert kept.m == 20

    def test_monotone_in_margin(self):
        rng = make_rng(11)
        z = rng.normal(0, 2, (3, 6))
        gen = GeneratedSet(rng.normal(0, 1, (50, 6)),
                           rng.integers(1, 4, 50))
        prev = np.zeros(50, dtype=bool)
        for margin in (0.05, 0.15, 0.3, 0.5, 0.7):
            mask = selection_mask(gen, z, target_set(0, 3), DOT,
                                  LossConfig(margin4=margin))
            assert np.all(mask | ~prev)  # larger margin never drops a point
            prev = mask


class TestGeneratedLosses:
    def test_gen_ce_confident_is_zero(self):
        z = z_for_logits([70.0, 0.0])
        gen = GeneratedSet(e1(3), np.array([1, 1, 1]))
        got = generated_cross_entropy_loss(gen, z, target_set(0, 2), DOT)
        assert got < 1e-9

    def test_gen_ce_quarter_confidence_is_ln4(self):
        z = z_for_logits([1.0, 1.0, 1.0, 1.0])
        gen = GeneratedSet(e1(5), np.array([2] * 5))
        got = generated_cross_entropy_loss(gen, z, target_set(0, 4), DOT)
        npt.assert_allclose(got, math.log(4.0), atol=1e-9)

    def test_gen_ce_ignores_source_prototypes(self):
        rng = make_rng(12)
        z = rng.normal(0, 1, (5, 6))
        gen = GeneratedSet(rng.normal(0, 1, (7, 6)),
                           rng.integers(4, 6, 7))
        got = generated_cross_entropy_loss(gen, z, target_set(3, 2), DOT)
        z2 = z.copy()
        z2[:3] = rng.normal(0, 9, (3, 6))  # perturb source rows only
        got2 = generated_cross_entropy_loss(gen, z2, target_set(3, 2), DOT)
        npt.assert_allclose(got, got2, rtol=1e-12)

    def test_gen_ce_empty_selection_warns_and_is_zero(self):
        gen = GeneratedSet(np.zeros((0, 6)), np.zeros(0, dtype=int))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            got = generated_cross_entropy_loss(gen, z_for_logits([0.0, 0.0]),
                                               target_set(0, 2), DOT)
        assert got == 0.0
        assert any("empty" in str(w.message) for w in caught)

    def test_gen_mi_mirrors_mi_over_sources(self):
        z = z_for_logits([0.0, 0.0])
        got = generated_mutual_info_loss(e1(4), z, source_set(2, 1), DOT,
                                         LossConfig(lambda0=1.0,
                                                    margin1=0.15))
        npt.assert_allclose(got, -0.15, atol=1e-9)

    def test_gen_mi_balanced_one_hot(self):
        z = z_for_logits([70.0, -70.0])
        x = e1(4)
        x[2:, 0] = -1.0
        got = generated_mutual_info_loss(x, z, source_set(2, 1), DOT)
        npt.assert_allclose(got, -LN2, atol=1e-6)


class TestLossGradients:
    """dZ of each term matches finite differences on the prototype matrix,
    for every distance kind."""

    def build(self, seed=13):
        rng = make_rng(seed)
        s_count, t_count, p_dim, n = 4, 3, 5, 8
        v = rng.uniform(0, 1, (s_count + t_count, 4))
        z = rng.normal(0.3, 1.0, (s_count + t_count, p_dim))
        x = rng.normal(0.2, 1.0, (n, p_dim))
        y = rng.integers(1, s_count + 1, n)
        gen = GeneratedSet(rng.normal(0.2, 1.0, (6, p_dim)),
                           rng.integers(s_count + 1, s_count + t_count + 1,
                                        6))
        return x, y, v, z, gen, source_set(s_count, t_count), \
            target_set(s_count, t_count)

    @pytest.mark.parametrize("kind", ["dot", "asym_dot", "euclidean",
                                      "cosine"])
    def test_total_gen_dz_matches_fd(self, kind):
        x, y, v, z, gen, src, tgt = self.build()
        spec = DistanceSpec(kind=kind)
        cfg = LossConfig(lambda1=0.4, lambda2=0.6, lambda3=0.3, gamma1=0.5,
                         gamma2=0.25, margin4=LN2)  # select everything
        sel = select_generated(gen, z, tgt, spec, cfg)

        def value(zz):
            rep, _ = total_loss_gen(x, y, gen, v, zz, src, tgt, spec, cfg,
                                    selected=sel)
            return rep.total

        rep, dz = total_loss_gen(x, y, gen, v, z, src, tgt, spec, cfg,
                                 want_grad=True, selected=sel)
        h = 1e-6
        fd = np.zeros_like(z)
        for i in range(z.shape[0]):
            for j in range(z.shape[1]):
                up = z.copy(); up[i, j] += h
                dn = z.copy(); dn[i, j] -= h
                fd[i, j] = (value(up) - value(dn)) / (2 * h)
        npt.assert_allclose(dz, fd, rtol=2e-4, atol=1e-7)
