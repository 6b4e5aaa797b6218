import pytest

from robusthedge.config import RunConfig, load_config, validate_config
from robusthedge.constants import DEFAULT_SEED
from robusthedge.errors import ValidationError


def test_defaults_from_a_mapping():
    config = validate_config({'command': 'follmer-demo'})
    assert config == RunConfig(command='follmer-demo')
    assert config.seed == DEFAULT_SEED
    assert config.stepper == 'implicit'


def test_hyphenated_keys(tmpdir):
    model = tmpdir.join('model.json')
    model.write('{}')
    config = validate_config(
        {
            'command': 'duality',
            'model': str(model),
            'claim': str(model),
            'grid-step': 0.1,
        }
    )
    assert config.grid_step == 0.1
    assert config.to_dict()['grid-step'] == 0.1
    assert 'samples' not in config.to_dict()


def test_overrides_win(tmpdir):
    config = validate_config(
        '{"command": "follmer-demo", "seed": 1, "horizon": 2}',
        {'seed': 5, 'horizon': None},
    )
    assert config.seed == 5
    assert config.horizon == 2


def test_all_errors_are_reported_with_lines():
    raw = '{\n  "command": "na1",\n  "bogus": 1,\n  "tolerance": -1\n}'
    with pytest.raises(ValidationError) as e:
        validate_config(raw)
    assert e.value.errors == [
        'line 3: Unknown key "bogus".',
        'line 4: The "tolerance" value must be a number > 0.',
        'The "na1" command requires "model".',
    ]
    assert str(e.value).startswith('The configuration is invalid:')


def test_malformed_json():
    with pytest.raises(ValidationError, match='line 3'):
        validate_config('{\n  "command": \n}')
    with pytest.raises(ValidationError, match='JSON object'):
        validate_config('[1, 2]')


def test_empty_text_still_needs_a_command():
    with pytest.raises(ValidationError, match='"command" value must be'):
        validate_config('')


@pytest.mark.parametrize(
    'values,message',
    [
        ({'command': 'sing'}, 'must be one of'),
        ({'grid-step': 2}, 'must be <= 1'),
        ({'grid-step': 0}, 'number > 0'),
        ({'samples': 0}, 'integer >= 1'),
        ({'workers': 1.5}, 'integer >= 1'),
        ({'seed': -1}, 'unsigned 64-bit'),
        ({'seed': 2**64}, 'unsigned 64-bit'),
        ({'stepper': 'rk4'}, '"implicit" or "explicit"'),
        ({'horizon': True}, 'number > 0'),
        ({'model': '/does/not/exist.json'}, 'does not exist'),
    ],
)
def test_invalid_values(values, message):
    data = {'command': 'follmer-demo'}
    data.update(values)
    with pytest.raises(ValidationError, match=message):
        validate_config(data)


@pytest.mark.parametrize(
    'command,missing',
    [
        ('na1', 'model'),
        ('price-tree', 'claim'),
        ('price-bsb', 'spec'),
        ('price-bsb', 'claim'),
        ('duality', 'model'),
    ],
)
def test_required_inputs(command, missing):
    with pytest.raises(ValidationError) as e:
        validate_config({'command': command})
    assert f'The "{command}" command requires "{missing}".' in e.value.errors


def test_claim_document_replaces_payoff(tmpdir):
    spec = tmpdir.join('spec.json')
    spec.write('{}')
    claim = tmpdir.join('claim.json')
    claim.write('{}')
    config = validate_config(
        {'command': 'price-bsb', 'spec': str(spec), 'claim': str(claim)}
    )
    assert config.payoff is None


def test_verify_hedge_needs_a_tree_or_a_surface(tmpdir):
    with pytest.raises(ValidationError, match='either model, prices'):
        validate_config({'command': 'verify-hedge'})
    spec = tmpdir.join('spec.json')
    spec.write('{}')
    surface = tmpdir.join('surface.csv')
    surface.write('')
    with pytest.raises(ValidationError, match='requires a payoff'):
        validate_config(
            {
                'command': 'verify-hedge',
                'spec': str(spec),
                'surface': str(surface),
            }
        )
    config = validate_config(
        {
            'command': 'verify-hedge',
            'spec': str(spec),
            'surface': str(surface),
            'payoff': 'call:100',
        }
    )
    assert config.surface == str(surface)


def test_load_config_from_file(tmpdir):
    filename = tmpdir.join('run.json')
    filename.write('{"command": "follmer-demo", "samples": 10}')
    config = load_config(str(filename), {'seed': 3})
    assert config.samples == 10
    assert config.seed == 3


def test_load_config_without_file():
    config = load_config(None, {'command': 'follmer-demo', 'workers': 2})
    assert config.workers == 2


def test_load_config_missing_file(tmpdir):
    with pytest.raises(ValidationError, match='config file does not exist'):
        load_config(str(tmpdir.join('nope.json')), {})
