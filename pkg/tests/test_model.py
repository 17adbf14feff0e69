import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from setflow.flows import numerical_jacobian_logdet
from setflow.model import (
    DeepSet,
    EntitySet,
    ModelConfig,
    NumericError,
    SetFlowModel,
    embed_label,
    interpolate,
    model_loglik,
    model_sample,
    randomize_parameters,
    reported_per_entity_ll,
    sample_sets,
    stack_forward,
    stack_inverse,
    deepset_pool,
)
from setflow.numerics import GradTape, backward, gaussian_entropy_total, ops
from setflow.numerics import mlp_forward

LOG_2PI = math.log(2 * math.pi)
H1 = 0.5 * math.log(2 * math.pi * math.e)


def tiny(D=2, G=3, K=2, seed=0, scale=0.5, **kw):
    cfg = ModelConfig(entity_dim=D, global_dim=G, n_stacks=K, hidden=(8,),
                      deepset_features=6, deepset_out=4, **kw)
    model = SetFlowModel(cfg, seed)
    return randomize_parameters(model, seed + 100, scale) if scale else model


class TestDeepSet:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.mean = DeepSet(3, 8, 5, (16,), rng, "mean")
        self.sum = DeepSet(3, 8, 5, (16,), rng, "sum")

    def test_permutation_invariant(self):
        X = np.random.default_rng(1).standard_normal((20, 3))
        perm = np.random.default_rng(2).permutation(20)
        for ds in (self.mean, self.sum):
            np.testing.assert_allclose(deepset_pool(ds, X[perm]), deepset_pool(ds, X), atol=1e-9)

    def test_single_entity(self):
        x = np.array([[0.3, -0.2, 1.0]])
        for ds in (self.mean, self.sum):
            ref = mlp_forward(ds.rho, mlp_forward(ds.phi, x[0]))
            np.testing.assert_allclose(deepset_pool(ds, x), ref, rtol=1e-14)

    def test_sum_of_duplicates(self):
        x = np.array([0.5, 0.1, -0.4])
        ref = mlp_forward(self.sum.rho, 2 * mlp_forward(self.sum.phi, x))
        np.testing.assert_allclose(deepset_pool(self.sum, np.stack([x, x])), ref, rtol=1e-14)

    def test_empty_set(self):
        with pytest.raises(ValueError, match="empty"):
            deepset_pool(self.mean, np.zeros((0, 3)))


class TestStack:
    def test_identity_stack(self):
        model = tiny(scale=0)
        rng = np.random.default_rng(0)
        z, X = rng.standard_normal((1, 3)), rng.standard_normal((1, 4, 2))
        z2, X2, le, lg = stack_forward(model.stacks[0], z, X)
        assert np.array_equal(z2, z) and np.array_equal(X2, X)
        assert le[0] == 0.0 and lg[0] == 0.0
        zi, Xi = stack_inverse(model.stacks[0], z, X)
        assert np.array_equal(zi, z) and np.array_equal(Xi, X)

    def test_equivariance(self):
        model = tiny()
        st_ = model.stacks[1]
        rng = np.random.default_rng(1)
        z, X = rng.standard_normal((1, 3)), rng.standard_normal((1, 7, 2))
        perm = rng.permutation(7)
        z2, X2, le, lg = st_.forward(z, X)
        z2p, X2p, lep, lgp = st_.forward(z, X[:, perm])
        np.testing.assert_allclose(X2p, X2[:, perm], atol=1e-9)
        np.testing.assert_allclose(z2p, z2, atol=1e-9)
        np.testing.assert_allclose([lep[0], lgp[0]], [le[0], lg[0]], atol=1e-9)
        # inverse path
        zi, Xi = st_.inverse(z2, X2)
        zip_, Xip = st_.inverse(z2, X2[:, perm])
        np.testing.assert_allclose(Xip, Xi[:, perm], atol=1e-9)
        np.testing.assert_allclose(zip_, zi, atol=1e-9)

    def test_stack_logdet_numerical(self):
        model = tiny()
        st_ = model.stacks[0]
        rng = np.random.default_rng(2)
        z, X = rng.standard_normal(3), rng.standard_normal((2, 2))

        def f(v):
            z2, X2, _, _ = st_.forward(v[None, :3], v[3:].reshape(1, 2, 2))
            return np.concatenate([z2[0], X2[0].ravel()])

        _, _, le, lg = st_.forward(z[None], X[None])
        num = numerical_jacobian_logdet(f, np.concatenate([z, X.ravel()]))
        assert le[0] + lg[0] == pytest.approx(num, rel=1e-5)

    def test_round_trip(self):
        model = tiny(D=3, G=5)
        rng = np.random.default_rng(3)
        z, X = rng.standard_normal((4, 5)), rng.standard_normal((4, 9, 3))
        z2, X2, _, _ = model.stacks[0].forward(z, X)
        zi, Xi = model.stacks[0].inverse(z2, X2)
        assert max(np.abs(zi - z).max(), np.abs(Xi - X).max()) < 1e-9

    def test_label_mismatch(self):
        model = tiny()
        with pytest.raises(ValueError):
            model.stacks[0].forward(np.zeros((1, 3)), np.zeros((1, 2, 2)), h=np.zeros((1, 2)))


class TestLogLik:
    def test_identity_model_zeros(self):
        model = tiny(scale=0)
        br = model_loglik(model, np.zeros((2, 2)), np.zeros(3))
        # two entities and a 3-dim global vector at the origin: -3.5 log(2 pi)
        assert br.joint == -2 * LOG_2PI - 1.5 * LOG_2PI
        assert br.joint == pytest.approx(-6.4325697, abs=1e-7)
        assert br.reported_set_ll == br.joint - gaussian_entropy_total(3)
        assert br.reported_set_ll == pytest.approx(-10.6893853, abs=1e-7)
        assert br.per_entity_ll == br.reported_set_ll / 2

    def test_breakdown_identities(self):
        model = tiny()
        rng = np.random.default_rng(0)
        br = model_loglik(model, rng.standard_normal((4, 2)), rng.standard_normal(3))
        assert br.joint == br.entity_term + br.global_term
        assert br.reported_set_ll == br.joint - gaussian_entropy_total(3)

    def test_joint_equals_change_of_variables(self):
        model = tiny(K=3)
        rng = np.random.default_rng(4)
        z, X = rng.standard_normal(3), rng.standard_normal((2, 2))

        def f(v):
            zK, XK, _, _ = model.encode(v[3:].reshape(2, 2), v[:3])
            return np.concatenate([zK, XK.ravel()])

        v = np.concatenate([z, X.ravel()])
        out = f(v)
        ref = -0.5 * (out @ out) - 0.5 * out.size * LOG_2PI + numerical_jacobian_logdet(f, v)
        assert model_loglik(model, X, z).joint == pytest.approx(ref, rel=1e-5)

    def test_permutation_invariance(self):
        model = tiny(D=3, G=4, K=3)
        rng = np.random.default_rng(5)
        X, z = rng.standard_normal((10, 3)), rng.standard_normal(4)
        a = model_loglik(model, X, z)
        b = model_loglik(model, X[rng.permutation(10)], z)
        assert abs(a.joint - b.joint) < 1e-9
        assert abs(a.logdet_global - b.logdet_global) < 1e-9

    def test_quadrature_total_mass(self):
        # s=1, D=2, G=1: marginalize z0 numerically, then integrate over x
        model = tiny(D=2, G=1, K=2, seed=7, scale=0.3)
        g = np.linspace(-9.0, 9.0, 121)
        dx = g[1] - g[0]
        xx, yy, zz = np.meshgrid(g, g, g, indexing="ij")
        X = np.stack([xx.ravel(), yy.ravel()], axis=-1)[:, None, :]
        joint = model_loglik(model, X, zz.ravel()[:, None]).joint
        mass = np.exp(joint).sum() * dx ** 3
        assert mass == pytest.approx(1.0, rel=1e-2)

    def test_single_entity_set_with_vector_entities(self):
        model = tiny(D=3, G=4)
        br = model_loglik(model, np.ones((1, 3)), np.zeros(4))
        assert np.isfinite(br.joint) and br.set_size == 1

    def test_non_finite_input_reports_stack(self):
        model = tiny()
        X = np.array([[np.nan, 0.0], [1.0, 1.0]])
        with pytest.raises(NumericError) as info:
            model_loglik(model, X, np.zeros(3))
        assert info.value.stack == 0

    def test_batched_matches_single(self):
        model = tiny()
        rng = np.random.default_rng(6)
        X, z = rng.standard_normal((5, 4, 2)), rng.standard_normal((5, 3))
        batched = model_loglik(model, X, z).joint
        single = [model_loglik(model, X[i], z[i]).joint for i in range(5)]
        np.testing.assert_allclose(batched, single, rtol=1e-13)


class TestBijectivity:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 64), st.integers(1, 6), st.integers(0, 10_000), st.sampled_from([1, 2, 3]))
    def test_decode_encode(self, s, K, seed, D):
        # scale 0.5 lets some 6-stack draws push latents past 1e12, beyond float64 round-trip resolution
        model = tiny(D=D, G=4, K=K, seed=seed, scale=0.3)
        rng = np.random.default_rng(seed)
        X, z = rng.standard_normal((s, D)), rng.standard_normal(4)
        zK, XK, _, _ = model.encode(X, z)
        z0, X0 = model.decode(zK, XK)
        assert max(np.abs(z0 - z).max(), np.abs(X0 - X).max()) < 1e-8

    def test_encode_equivariant(self):
        model = tiny(D=2, G=3, K=4)
        rng = np.random.default_rng(8)
        X, z = rng.standard_normal((12, 2)), rng.standard_normal(3)
        perm = rng.permutation(12)
        zK, XK, _, _ = model.encode(X, z)
        zKp, XKp, _, _ = model.encode(X[perm], z)
        np.testing.assert_allclose(XKp, XK[perm], atol=1e-9)
        np.testing.assert_allclose(zKp, zK, atol=1e-9)


class TestSampling:
    def test_identity_model_returns_noise(self):
        model = tiny(scale=0)
        out, (z, E) = model_sample(model, 5, rng=3, return_noise=True)
        assert np.array_equal(out.entities, E) and np.array_equal(out.z, z)

    def test_reencode_recovers_noise(self):
        model = tiny(D=3, G=6, K=4)
        out, (z, E) = model_sample(model, 9, rng=4, return_noise=True)
        zK, XK, _, _ = model.encode(out.entities, out.z)
        assert max(np.abs(zK - z).max(), np.abs(XK - E).max()) < 1e-8

    def test_size_one_and_fixed_seed(self):
        model = tiny()
        a = model_sample(model, 1, rng=5)
        b = model_sample(model, 1, rng=5)
        assert a.entities.shape == (1, 2)
        assert a.entities.tobytes() == b.entities.tobytes()

    def test_sample_sets_shapes(self):
        X, z0 = sample_sets(tiny(), 7, 4, rng=0)
        assert X.shape == (7, 4, 2) and z0.shape == (7, 3)

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            model_sample(tiny(), 0)


class TestLabels:
    def make(self):
        return tiny(D=2, G=3, num_classes=4, label_dim=2)

    def test_lookup(self):
        model = self.make()
        assert np.array_equal(embed_label(model, 1), embed_label(model, 1))
        assert not np.array_equal(embed_label(model, 0), embed_label(model, 1))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            embed_label(self.make(), 4)
        with pytest.raises(ValueError):
            embed_label(tiny(), 0)

    def test_gradient_only_on_used_row(self):
        model = self.make()
        rng = np.random.default_rng(0)
        X, z = rng.standard_normal((2, 3, 2)), rng.standard_normal((2, 3))
        tape = GradTape(model.named_parameters())
        e, g, _, _ = model.log_joint_terms(X, z, np.array([2, 2]), tape=tape)
        grads = backward(tape, ops.neg(ops.sum(ops.add(e, g))))
        table = grads["label_table"]
        assert np.any(table[2] != 0)
        assert np.all(table[[0, 1, 3]] == 0)

    def test_label_required(self):
        model = self.make()
        with pytest.raises(ValueError):
            model_loglik(model, np.zeros((2, 2)), np.zeros(3))
        with pytest.raises(ValueError):
            model_loglik(tiny(), np.zeros((2, 2)), np.zeros(3), label=np.array([0]))


class TestInterpolate:
    def sets(self, D=2, s=5):
        rng = np.random.default_rng(9)
        return (EntitySet(rng.standard_normal((s, D)), rng.standard_normal(3)),
                EntitySet(rng.standard_normal((s, D)) + 2, rng.standard_normal(3)))

    def test_endpoints(self):
        model = tiny(K=3)
        a, b = self.sets()
        np.testing.assert_allclose(interpolate(model, a, b, 0.0).entities, a.entities, atol=1e-8)
        np.testing.assert_allclose(interpolate(model, a, b, 1.0).entities, b.entities, atol=1e-8)

    def test_identity_midpoint(self):
        model = tiny(scale=0)
        a, b = self.sets()
        mid = interpolate(model, a, b, 0.5)
        np.testing.assert_allclose(mid.entities, 0.5 * (a.entities + b.entities), rtol=1e-15)

    def test_size_mismatch(self):
        a, _ = self.sets(s=5)
        _, b = self.sets(s=4)
        with pytest.raises(ValueError, match="differ"):
            interpolate(tiny(), a, b, 0.5)

    def test_conditional_policies(self):
        model = tiny(num_classes=3, label_dim=2)
        a, b = self.sets()
        a.label, b.label = 0, 2
        for policy in ("mix", "a", "b", 1):
            out = interpolate(model, a, b, 0.3, label_policy=policy)
            assert out.entities.shape == a.entities.shape
        np.testing.assert_allclose(interpolate(model, a, b, 0.0, "a").entities, a.entities, atol=1e-8)


class TestReportedLL:
    def test_single_set_flags_sem(self):
        summary = reported_per_entity_ll(tiny(), [np.zeros((3, 2))])
        assert summary.two_sem == 0.0 and not summary.sem_defined and summary.n_sets == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            reported_per_entity_ll(tiny(), [])

    def test_identity_model_analytic_expectation(self):
        # E[log N(x)] = -D*H1 per entity, E[log N(z0)] = -G*H1 per set, minus G*H1 reported
        D, G, s = 2, 16, 1000
        model = tiny(D=D, G=G, scale=0)
        rng = np.random.default_rng(0)
        sets = [rng.standard_normal((s, D)) for _ in range(200)]
        summary = reported_per_entity_ll(model, sets, seed=42)
        expected = -D * H1 - 2 * G * H1 / s
        assert abs(summary.mean - expected) < 1.5 * summary.two_sem

    def test_deterministic_and_thread_independent(self):
        model = tiny(K=3)
        rng = np.random.default_rng(1)
        sets = [rng.standard_normal((s, 2)) for s in (3, 4, 5, 3, 4) * 20]
        a = reported_per_entity_ll(model, sets, seed=42)
        b = reported_per_entity_ll(model, sets, seed=42, workers=4)
        assert a.mean == b.mean and np.array_equal(a.per_set, b.per_set)
        # smaller chunks change BLAS blocking, hence last-ulp differences only
        d = reported_per_entity_ll(model, sets, seed=42, workers=4, chunk=7)
        np.testing.assert_allclose(d.per_set, a.per_set, rtol=1e-12)
        c = reported_per_entity_ll(model, sets, seed=43)
        assert c.mean != a.mean


class TestTrainMode:
    def test_frozen_statistics_restores_flag(self):
        model = tiny(D=3, G=4, batchnorm=True)
        model.train()
        with model.frozen_statistics():
            before = {k: v.copy() for k, v in model.named_buffers().items()}
            model_loglik(model, np.random.default_rng(0).standard_normal((2, 5, 3)), np.zeros((2, 4)))
            after = model.named_buffers()
            assert all(np.array_equal(before[k], after[k]) for k in before)
        model_loglik(model, np.random.default_rng(0).standard_normal((2, 5, 3)), np.zeros((2, 4)))
        assert any(not np.array_equal(before[k], v) for k, v in model.named_buffers().items())
