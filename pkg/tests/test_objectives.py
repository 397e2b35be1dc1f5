import numpy as np
import pytest

from fedawe_sim.errors import InvalidInputError
from fedawe_sim.objectives import (LogisticObjective, NoiseSpec, QuadraticObjective, SyntheticPool,
                                   generate_dirichlet_partition, global_eval, global_grad, make_quadratics,
                                   make_test_set, random_quadratics, stochastic_grad, true_grad, value)


class TestQuadratic:

    def test_value_and_gradient(self):
        obj = QuadraticObjective([1.0, -2.0])
        x = np.array([3.0, 0.0])
        assert value(obj, x) == pytest.approx(0.5 * (4.0 + 4.0))
        np.testing.assert_array_equal(true_grad(obj, x), [2.0, 2.0])

    def test_dimension_mismatch(self):
        obj = QuadraticObjective([1.0, 2.0])
        with pytest.raises(InvalidInputError):
            true_grad(obj, np.zeros(3))

    def test_minimizer_is_read_only(self):
        obj = QuadraticObjective([1.0])
        with pytest.raises(ValueError):
            obj.u[0] = 2.0

    def test_make_quadratics_scalars_are_one_dimensional(self):
        objectives = make_quadratics([0.0, 100.0])
        assert [obj.dim for obj in objectives] == [1, 1]
        assert global_eval(objectives, np.array([50.0])) == pytest.approx(1250.0)
        np.testing.assert_allclose(global_grad(objectives, np.array([50.0])), [0.0])

    def test_random_quadratics_shape(self, rng):
        objectives = random_quadratics(6, 3, 2.0, rng)
        assert len(objectives) == 6
        assert all(obj.dim == 3 for obj in objectives)


class TestGlobalEval:

    def test_permutation_invariant_bitwise(self, rng):
        objectives = random_quadratics(9, 4, 10.0, rng)
        x = rng.normal(size=4)
        reference = global_eval(objectives, x)
        for _ in range(5):
            order = rng.permutation(len(objectives))
            assert global_eval([objectives[i] for i in order], x) == reference

    def test_mixed_dimensions_rejected(self):
        with pytest.raises(InvalidInputError):
            global_eval([QuadraticObjective([0.0]), QuadraticObjective([0.0, 1.0])], np.zeros(1))


class TestLogistic:

    def test_gradient_matches_finite_differences(self, small_logistic, rng):
        obj = small_logistic[0]
        x = 0.3 * rng.normal(size=obj.dim)
        h = 1e-6
        numeric = np.empty(obj.dim)
        for k in range(obj.dim):
            e = np.zeros(obj.dim)
            e[k] = h
            numeric[k] = (obj.value(x + e) - obj.value(x - e)) / (2 * h)
        np.testing.assert_allclose(obj.true_grad(x), numeric, atol=1e-6)

    def test_dimension_layout(self, small_logistic):
        obj = small_logistic[0]
        assert obj.dim == obj.classes * obj.n_features + obj.classes

    def test_zero_model_has_uniform_loss(self, small_logistic):
        obj = small_logistic[0]
        assert obj.value(np.zeros(obj.dim)) == pytest.approx(np.log(obj.classes))

    def test_full_batch_equals_true_gradient(self, small_logistic, rng):
        obj = small_logistic[1]
        x = rng.normal(size=obj.dim)
        np.testing.assert_allclose(obj.batch_grad(x, np.arange(obj.n_samples)), obj.true_grad(x), atol=1e-12)

    def test_accuracy_bounds(self, small_logistic, rng):
        obj = small_logistic[2]
        acc = obj.accuracy(rng.normal(size=obj.dim))
        assert 0.0 <= acc <= 1.0

    def test_rejects_bad_labels(self):
        with pytest.raises(InvalidInputError):
            LogisticObjective(np.zeros((3, 2)), [0, 1, 5], classes=3)


class TestStochasticGradient:

    def test_noiseless_oracle_is_exact(self, rng):
        obj = QuadraticObjective([1.0, 2.0])
        x = np.array([0.5, 0.5])
        np.testing.assert_array_equal(stochastic_grad(obj, x, NoiseSpec(), rng), obj.true_grad(x))

    def test_additive_noise_is_unbiased_with_total_variance_sigma_squared(self, rng):
        obj = QuadraticObjective([1.0, 2.0])
        x = np.array([0.0, 0.0])
        draws = np.stack([stochastic_grad(obj, x, NoiseSpec(sigma=1.0), rng) for _ in range(20000)])
        np.testing.assert_allclose(draws.mean(axis=0), obj.true_grad(x), atol=0.03)
        total_var = np.sum(draws.var(axis=0))
        assert total_var == pytest.approx(1.0, rel=0.05)

    def test_minibatch_is_unbiased(self, small_logistic, rng):
        obj = small_logistic[0]
        x = 0.2 * rng.normal(size=obj.dim)
        noise = NoiseSpec(batch_size=5)
        draws = np.stack([stochastic_grad(obj, x, noise, rng) for _ in range(20000)])
        np.testing.assert_allclose(draws.mean(axis=0), obj.true_grad(x), atol=0.03)

    def test_noise_spec_validation(self):
        with pytest.raises(InvalidInputError):
            NoiseSpec(sigma=-1.0)
        with pytest.raises(InvalidInputError):
            NoiseSpec(batch_size=0)


class TestSyntheticData:

    def test_pool_draw_without_replacement(self, small_pool, rng):
        rows = small_pool.draw(1, 50, rng)
        assert rows.shape == (50, small_pool.features)
        assert len({tuple(r) for r in rows}) == 50

    def test_pool_draw_too_many(self, small_pool, rng):
        with pytest.raises(InvalidInputError):
            small_pool.draw(0, small_pool.per_class + 1, rng)

    def test_pool_needs_enough_features(self):
        with pytest.raises(InvalidInputError):
            SyntheticPool.generate(classes=5, features=3)

    def test_partition_shapes(self, small_logistic):
        assert len(small_logistic) == 4
        for obj in small_logistic:
            assert obj.n_samples == 40
            assert obj.class_dist.sum() == pytest.approx(1.0)

    def test_alpha_must_be_positive(self, small_pool, rng):
        for alpha in (0.0, -1.0):
            with pytest.raises(InvalidInputError):
                generate_dirichlet_partition(alpha, 3, 3, small_pool, rng)

    def test_small_alpha_is_more_concentrated(self, rng):
        pool = SyntheticPool.generate(classes=10, features=10, per_class=500, rng=rng)
        peaked = generate_dirichlet_partition(0.05, 40, 10, pool, rng, samples_per_client=20)
        flat = generate_dirichlet_partition(10.0, 40, 10, pool, rng, samples_per_client=20)
        assert (np.mean([obj.class_dist.max() for obj in peaked])
                > np.mean([obj.class_dist.max() for obj in flat]) + 0.3)

    def test_huge_alpha_is_nearly_uniform(self, rng):
        pool = SyntheticPool.generate(classes=10, features=10, per_class=100, rng=rng)
        clients = generate_dirichlet_partition(1e6, 20, 10, pool, rng, samples_per_client=10)
        for obj in clients:
            np.testing.assert_allclose(obj.class_dist, 0.1, atol=1e-2)

    def test_small_alpha_is_heavily_skewed(self, rng):
        pool = SyntheticPool.generate(classes=10, features=10, per_class=100, rng=rng)
        clients = generate_dirichlet_partition(0.1, 100, 10, pool, rng, samples_per_client=10)
        assert np.mean([obj.class_dist.max() for obj in clients]) > 0.5

    def test_test_set_is_balanced(self, small_pool, rng):
        test = make_test_set(small_pool, 25, rng)
        np.testing.assert_array_equal(np.bincount(test.labels), [25, 25, 25])
