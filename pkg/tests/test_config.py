import json

import pytest

from fedawe_sim.config import (DEFAULT_CONFIG, ExperimentConfig, config_from_dict, config_to_dict, load_config,
                               save_config, with_overrides)
from fedawe_sim.errors import ConfigError


class TestDefaults:

    def test_empty_dict_gives_defaults(self):
        config = config_from_dict({})
        assert config.m == DEFAULT_CONFIG['m']
        assert config.hyper.schedule == 'sqrt_decay'
        assert config.algorithms == ['fedawe', 'fedavg_active']
        assert config.sweep == {}

    def test_partial_section_keeps_other_defaults(self):
        config = config_from_dict({'hyper': {'rounds': 7}})
        assert config.hyper.rounds == 7
        assert config.hyper.eta_0 == DEFAULT_CONFIG['hyper']['eta_0']

    def test_numbers_are_normalized(self):
        config = config_from_dict({'m': 4.0, 'dynamics': {'p': 1}})
        assert isinstance(config.m, int)
        assert isinstance(config.dynamics.p, float)

    def test_eta_overrides(self):
        config = config_from_dict({'hyper': {'eta_0': 0.1, 'eta_0_overrides': {'mifa': 0.02}}})
        assert config.hyper.eta_0_for('mifa') == 0.02
        assert config.hyper.eta_0_for('fedawe') == 0.1


class TestValidation:

    @pytest.mark.parametrize('data,field', [
        ({'colour': 'red'}, 'colour'),
        ({'hyper': {'warmup': 3}}, 'hyper.warmup'),
        ({'hyper': {'eta_g': 0.5}}, 'hyper.eta_g'),
        ({'hyper': {'local_steps': 0}}, 'hyper.local_steps'),
        ({'hyper': {'schedule': 'cosine'}}, 'hyper.schedule'),
        ({'hyper': {'eta_0_overrides': {'scaffold': 0.1}}}, 'hyper.eta_0_overrides.scaffold'),
        ({'m': 0}, 'm'),
        ({'m': True}, 'm'),
        ({'algorithms': ['fedawe', 'fedawe']}, 'algorithms'),
        ({'algorithms': ['fedprox']}, 'algorithms'),
        ({'dynamics': {'p': 0.0}}, 'dynamics.p'),
        ({'m': 3, 'dynamics': {'p': [0.5, 0.5]}}, 'dynamics.p'),
        ({'dynamics': {'family': 'weekly'}}, 'dynamics.family'),
        ({'dynamics': {'class_weighted': True}}, 'dynamics.class_weighted'),
        ({'dynamics': {'class_weighted': 'yes'}}, 'dynamics.class_weighted'),
        ({'objective': {'kind': 'cnn'}}, 'objective.kind'),
        ({'objective': 'quadratic'}, 'objective'),
        ({'m': 2, 'objective': {'minimizers': [0.0]}}, 'objective.minimizers'),
        ({'seeds': [-1]}, 'seeds'),
        ({'preset': 'example9'}, 'preset'),
        ({'sweep': {'hyper.warmup': [1, 2]}}, 'sweep.hyper.warmup'),
        ({'sweep': {'hyper.rounds': []}}, 'sweep.hyper.rounds'),
        ({'sweep': {'seeds': [[1], [2]]}}, 'sweep.seeds'),
        ({'record_wallclock': 1}, 'record_wallclock'),
    ])
    def test_errors_name_the_field(self, data, field):
        with pytest.raises(ConfigError) as err:
            config_from_dict(data)
        assert err.value.field == field
        assert f"'{field}'" in str(err.value)

    def test_root_must_be_object(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict([1, 2])
        assert err.value.field == '<root>'

    def test_known_preset_accepted(self):
        assert config_from_dict({'preset': 'example1_bias'}).preset == 'example1_bias'

    def test_valid_sweep(self):
        config = config_from_dict({'sweep': {'dynamics.gamma': [0.0, 0.3], 'm': [5, 10]}})
        assert config.sweep['m'] == [5, 10]


class TestFiles:

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            load_config(tmp_path / 'nope.json')
        assert err.value.field == '<file>'

    def test_bad_json(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{"m": 3,', encoding='utf-8')
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert err.value.field == '<file>'
        assert 'not valid JSON' in str(err.value)

    def test_save_and_load(self, tmp_path, quadratic_config_dict):
        config = config_from_dict(quadratic_config_dict)
        path = save_config(config, tmp_path / 'sub' / 'config.json')
        again = load_config(path)
        assert config_to_dict(again) == config_to_dict(config)
        assert json.loads(path.read_text(encoding='utf-8'))['dynamics']['p'] == [0.9, 0.7, 0.5, 0.3]


class TestOverrides:

    def test_dotted_replacement(self, quadratic_config_dict):
        config = config_from_dict({**quadratic_config_dict, 'sweep': {'hyper.rounds': [5, 10]}})
        point = with_overrides(config, {'hyper.rounds': 10, 'dynamics.gamma': 0.1})
        assert isinstance(point, ExperimentConfig)
        assert point.hyper.rounds == 10
        assert point.dynamics.gamma == 0.1
        assert point.sweep == {}
        assert config.hyper.rounds == 15

    def test_overrides_are_validated(self, quadratic_config_dict):
        config = config_from_dict(quadratic_config_dict)
        with pytest.raises(ConfigError) as err:
            with_overrides(config, {'hyper.eta_g': 0.1})
        assert err.value.field == 'hyper.eta_g'
