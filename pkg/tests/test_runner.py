import numpy as np
import pytest

from fedawe_sim.availability import draw_class_contribution
from fedawe_sim.config import config_from_dict
from fedawe_sim.errors import ConfigError, InvalidInputError
from fedawe_sim.results import rows_to_csv
from fedawe_sim.rng import stream
from fedawe_sim.runner import (SEED_ENV_VAR, build_problem, execute, hyper_params, make_jobs, resolve_seeds,
                               run_experiment, sweep_grid)


class TestSeeds:

    def test_cli_wins(self, monkeypatch, quadratic_config_dict):
        monkeypatch.setenv(SEED_ENV_VAR, '9')
        assert resolve_seeds([4, 5], config_from_dict(quadratic_config_dict)) == [4, 5]

    def test_config_then_env(self, monkeypatch, quadratic_config_dict):
        monkeypatch.setenv(SEED_ENV_VAR, '9,10')
        assert resolve_seeds(None, config_from_dict(quadratic_config_dict)) == [3]
        assert resolve_seeds(None, config_from_dict({})) == [9, 10]

    def test_default_zero(self, monkeypatch):
        monkeypatch.delenv(SEED_ENV_VAR, raising=False)
        assert resolve_seeds(None) == [0]

    def test_bad_env(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, 'abc')
        with pytest.raises(ConfigError) as err:
            resolve_seeds(None)
        assert err.value.field == SEED_ENV_VAR


class TestStreams:

    def test_purposes_are_independent(self):
        a = stream(1, 'data').random(3)
        b = stream(1, 'availability').random(3)
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, stream(1, 'data').random(3))

    def test_unknown_purpose(self):
        with pytest.raises(KeyError):
            stream(1, 'weather')


class TestProblem:

    def test_quadratic_problem(self, quadratic_config_dict):
        config = config_from_dict(quadratic_config_dict)
        problem = build_problem(config, 3)
        assert len(problem.objectives) == 4
        assert problem.x0.shape == (2,)
        np.testing.assert_array_equal(problem.dynamics.base_p, [0.9, 0.7, 0.5, 0.3])
        again = build_problem(config, 3)
        np.testing.assert_array_equal(problem.objectives[0].u, again.objectives[0].u)

    def test_explicit_minimizers(self):
        config = config_from_dict({'m': 2, 'objective': {'minimizers': [0.0, 100.0]}, 'x0': [50.0]})
        problem = build_problem(config, 0)
        assert [float(obj.u[0]) for obj in problem.objectives] == [0.0, 100.0]
        np.testing.assert_array_equal(problem.x0, [50.0])

    def test_x0_dimension_checked(self):
        config = config_from_dict({'objective': {'dim': 3}, 'x0': [1.0]})
        with pytest.raises(ConfigError):
            build_problem(config, 0)

    def test_class_weighted_probabilities(self):
        config = config_from_dict({
            'm': 6,
            'objective': {'kind': 'logistic', 'classes': 4, 'features': 6, 'samples_per_client': 30,
                          'pool_per_class': 200, 'test_per_class': 10},
            'dynamics': {'class_weighted': True, 'family': 'sine'},
        })
        problem = build_problem(config, 2)
        assert problem.dynamics.m == 6
        assert np.all(problem.dynamics.base_p >= 0.02) and np.all(problem.dynamics.base_p <= 1.0)
        assert problem.test_set is not None

    @pytest.mark.parametrize('family', ['sine', 'interleaved_sine'])
    def test_probability_floor_skips_interleaved_sine(self, family):
        config = config_from_dict({
            'm': 5,
            'objective': {'kind': 'logistic', 'classes': 4, 'features': 6, 'samples_per_client': 20,
                          'pool_per_class': 100},
            'dynamics': {'class_weighted': True, 'family': family, 'phi_caps': [0.01] * 4},
        })
        problem = build_problem(config, 2)
        phi = draw_class_contribution(stream(2, 'dynamics'), [0.01] * 4)
        raw = np.array([obj.class_dist for obj in problem.objectives]) @ phi.phi
        assert np.all(raw < 0.02)
        expected = raw if family == 'interleaved_sine' else np.full(5, 0.02)
        np.testing.assert_allclose(problem.dynamics.base_p, expected)

    def test_phi_caps_length_checked(self):
        config = config_from_dict({
            'm': 3,
            'objective': {'kind': 'logistic', 'classes': 3, 'features': 4, 'samples_per_client': 10,
                          'pool_per_class': 50},
            'dynamics': {'class_weighted': True, 'phi_caps': [1.0, 0.5]},
        })
        with pytest.raises(ConfigError) as err:
            build_problem(config, 0)
        assert err.value.field == 'dynamics.phi_caps'

    def test_per_algorithm_step_size(self):
        config = config_from_dict({'hyper': {'eta_0': 0.1, 'schedule': 'constant',
                                             'eta_0_overrides': {'mifa': 0.01}}})
        assert hyper_params(config, 'mifa').eta_l(5) == 0.01
        assert hyper_params(config, 'fedawe').eta_l(5) == 0.1


class TestSweep:

    def test_no_sweep_is_single_point(self, quadratic_config_dict):
        assert sweep_grid(config_from_dict(quadratic_config_dict)) == [{}]

    def test_cartesian_product_in_key_order(self):
        config = config_from_dict({'sweep': {'m': [2, 4], 'dynamics.gamma': [0.1, 0.2, 0.3]}})
        grid = sweep_grid(config)
        assert len(grid) == 6
        assert grid[0] == {'dynamics.gamma': 0.1, 'm': 2}
        assert grid[1] == {'dynamics.gamma': 0.1, 'm': 4}

    def test_jobs_carry_grid_points(self, quadratic_config_dict):
        config = config_from_dict({**quadratic_config_dict, 'sweep': {'hyper.rounds': [3, 5]}})
        jobs = make_jobs(config, [0, 1], use_sweep=True)
        assert len(jobs) == 2 * 2 * 2
        assert {job.config.hyper.rounds for job in jobs if job.grid_point == 1} == {5}


class TestExecution:

    def test_rows_sorted_and_complete(self, quadratic_config_dict):
        config = config_from_dict(quadratic_config_dict)
        rows = run_experiment(config, [2, 1], workers=1)
        assert len(rows) == 2 * 2 * 15
        keys = [(r.grid_point, r.seed, config.algorithms.index(r.algorithm), r.round) for r in rows]
        assert keys == sorted(keys)

    def test_rerun_is_byte_identical(self, quadratic_config_dict):
        config = config_from_dict(quadratic_config_dict)
        assert rows_to_csv(run_experiment(config, [3])) == rows_to_csv(run_experiment(config, [3], workers=1))

    def test_thread_pool_matches_serial(self, quadratic_config_dict):
        config = config_from_dict({**quadratic_config_dict, 'sweep': {'dynamics.gamma': [0.0, 0.5]}})
        serial = run_experiment(config, [0, 1], workers=1, use_sweep=True)
        threaded = run_experiment(config, [0, 1], workers=4, use_sweep=True)
        assert rows_to_csv(serial) == rows_to_csv(threaded)

    def test_execute_keeps_job_order(self):
        assert execute(lambda x: x * x, range(10), workers=3) == [x * x for x in range(10)]

    def test_needs_seeds(self, quadratic_config_dict):
        with pytest.raises(InvalidInputError):
            run_experiment(config_from_dict(quadratic_config_dict), [])
