import numpy as np
import pytest

from robusthedge.errors import (
    ConditioningError,
    PastingError,
    PolicyError,
    SchemaVersionError,
    TreeFamilyError,
    UncertaintySpecError,
)
from robusthedge.models import (
    BangBangVolatilityPolicy,
    ConstantPolicy,
    ModelLaw,
    UncertaintySpec,
    UniformVolatilityPolicy,
    VolatilityBox,
    VolatilityMatrices,
    build_tree_family,
    condition,
    conditional_expectation,
    cylinder_probabilities,
    enumerate_paths,
    expectation,
    lattice_family,
    paste,
    quasi_sure_nodes,
    random_tree_family,
    simulate_array,
    simulate_paths,
    supports,
    volatility_lattice_family,
)


def binomial_document(**extra):
    document = {
        'nodes': [
            {'id': 'root', 'time': 0, 'S': 1.0},
            {'id': 'up', 'time': 1, 'S': 1.1},
            {'id': 'down', 'time': 1, 'S': 0.9},
        ],
        'edges': [['root', 'up'], ['root', 'down']],
        'models': [
            {'name': 'p', 'probabilities': {'root': {'up': 0.5, 'down': 0.5}}}
        ],
    }
    document.update(extra)
    return document


def two_period():
    return lattice_family(
        1.0,
        (1.1, 0.9),
        2,
        {'a': (0.5, 0.5), 'b': (0.3, 0.7)},
    )


def make_spec(**overrides):
    values = dict(
        drift_lower=(0.0,),
        drift_upper=(0.0,),
        volatility=VolatilityBox(lower=(0.01,), upper=(0.04,)),
        horizon=1.0,
        steps=20,
        s0=(100.0,),
        relative=True,
    )
    values.update(overrides)
    return UncertaintySpec(**values)


def test_build_binomial_from_document():
    fam = build_tree_family(binomial_document())
    assert len(fam.nodes) == 3
    assert fam.root == 'root'
    assert fam.nodes['root'].children == ('up', 'down')
    assert fam.model('p').transitions['root'] == (0.5, 0.5)
    assert fam.horizon == 1


def test_missing_probabilities_default_to_zero():
    document = binomial_document(
        models=[{'name': 'p', 'probabilities': {'root': {'up': 1.0}}}]
    )
    fam = build_tree_family(document)
    assert fam.model('p').transitions['root'] == (1.0, 0.0)


def test_generator_node_count():
    fam = build_tree_family(
        {
            'generator': {
                'type': 'lattice',
                's0': 100,
                'factors': [1.1, 1.0, 0.9],
                'periods': 3,
                'models': [[0.3, 0.4, 0.3]],
            }
        }
    )
    assert len(fam.nodes) == 1 + 3 + 9 + 27


def test_volatility_lattice_models_are_martingales():
    fam = volatility_lattice_family(100.0, 0.1, 0.2, 0.25, 2)
    assert [m.name for m in fam.models] == ['sigma_lo', 'sigma_hi']
    for model in fam.models:
        for node_id, probs in model.transitions.items():
            drift = np.asarray(probs) @ fam.increments(node_id)
            assert abs(drift[0]) < 1e-10


def test_trinomial_with_two_models_shares_supports():
    fam = lattice_family(
        1.0, (1.1, 1.0, 0.9), 1, {'a': (0.2, 0.6, 0.2), 'b': (0.4, 0.2, 0.4)}
    )
    assert len(fam.models) == 2
    assert supports(fam, 'n') == ('n.0', 'n.1', 'n.2')


def test_supports_is_union_over_models():
    fam = lattice_family(
        1.0, (1.1, 1.0, 0.9), 1, {'a': (0.5, 0.5, 0.0), 'b': (0.0, 0.5, 0.5)}
    )
    assert supports(fam, 'n') == ('n.0', 'n.1', 'n.2')


def test_supports_excludes_uncharged_children():
    fam = lattice_family(
        1.0, (1.1, 1.0, 0.9), 1, {'a': (0.5, 0.0, 0.5), 'b': (0.3, 0.0, 0.7)}
    )
    assert supports(fam, 'n') == ('n.0', 'n.2')
    assert 'n.1' not in fam.quasi_sure
    assert quasi_sure_nodes(fam) == ('n', 'n.0', 'n.2')


def test_leaves_have_no_supported_children():
    fam = two_period()
    assert supports(fam, 'n.0.1') == ()
    assert fam.model('a').charged(fam, 'n.1.0') == ()


@pytest.mark.parametrize(
    'document,message',
    [
        (
            binomial_document(edges=[['root', 'up'], ['root', 'left']]),
            'dangling',
        ),
        (
            binomial_document(
                models=[
                    {
                        'name': 'p',
                        'probabilities': {'root': {'up': 0.5, 'down': 0.6}},
                    }
                ]
            ),
            'sum to 1',
        ),
        (
            binomial_document(
                nodes=[
                    {'id': 'root', 'time': 0, 'S': 1.0},
                    {'id': 'up', 'time': 1, 'S': 1.1},
                    {'id': 'down', 'time': 1, 'S': -0.9},
                ],
                nonnegative=True,
            ),
            'negative value',
        ),
        (
            binomial_document(
                models=[
                    {
                        'name': 'p',
                        'probabilities': {'ghost': {'up': 1.0}},
                    }
                ]
            ),
            'unknown node',
        ),
    ],
)
def test_invalid_documents(document, message):
    with pytest.raises(TreeFamilyError, match=message):
        build_tree_family(document)


def test_reachable_leaf_before_horizon_is_rejected():
    document = {
        'nodes': [
            {'id': 'r', 'time': 0, 'S': 1.0},
            {'id': 'a', 'time': 1, 'S': 1.1},
            {'id': 'b', 'time': 1, 'S': 0.9},
            {'id': 'c', 'time': 2, 'S': 1.2},
        ],
        'edges': [['r', 'a'], ['r', 'b'], ['a', 'c']],
        'models': [
            {
                'name': 'p',
                'probabilities': {'r': {'a': 0.5, 'b': 0.5}, 'a': {'c': 1}},
            }
        ],
    }
    with pytest.raises(TreeFamilyError, match='ends before the horizon'):
        build_tree_family(document)


def test_unreachable_short_branch_is_allowed():
    document = {
        'nodes': [
            {'id': 'r', 'time': 0, 'S': 1.0},
            {'id': 'a', 'time': 1, 'S': 1.0},
            {'id': 'b', 'time': 1, 'S': 0.9},
            {'id': 'c', 'time': 2, 'S': 1.0},
        ],
        'edges': [['r', 'a'], ['r', 'b'], ['a', 'c']],
        'models': [
            {
                'name': 'p',
                'probabilities': {'r': {'a': 1.0}, 'a': {'c': 1}},
            }
        ],
    }
    fam = build_tree_family(document)
    assert 'b' not in fam.quasi_sure


def test_newer_schema_version_is_rejected():
    with pytest.raises(SchemaVersionError):
        build_tree_family(binomial_document(**{'schema-version': '2.0'}))


def test_document_round_trip():
    fam = two_period()
    rebuilt = build_tree_family(fam.to_dict())
    assert rebuilt.nodes == fam.nodes
    assert rebuilt.models == fam.models


def test_condition_on_up_node():
    fam = two_period()
    sub = condition(fam, 'n.0')
    assert sub.root == 'n.0'
    assert sub.horizon == 1
    assert sub.origin == pytest.approx((1.1,))
    assert sub.relative_value('n.0') == pytest.approx([0.0])
    assert sub.nodes['n.0.0'].value == pytest.approx((1.21,))
    assert [m.name for m in sub.models] == ['a', 'b']


def test_condition_drops_models_without_mass():
    fam = lattice_family(
        1.0, (1.1, 0.9), 2, {'a': (1.0, 0.0), 'b': (0.5, 0.5)}
    )
    sub = condition(fam, 'n.1')
    assert [m.name for m in sub.models] == ['b']


def test_condition_rejects_null_node():
    fam = lattice_family(1.0, (1.1, 0.9), 2, {'a': (1.0, 0.0)})
    with pytest.raises(ConditioningError):
        condition(fam, 'n.1')
    with pytest.raises(ConditioningError):
        condition(fam, 'missing')


def test_conditioning_consistency_with_expectation():
    fam = two_period()
    model = fam.model('b')
    g = {v: fam.nodes[v].value[0] ** 2 for v in fam.terminal_nodes()}
    inner = conditional_expectation(fam, model, g, 1)
    for node_id, value in inner.items():
        sub = condition(fam, node_id)
        local = {v: g[v] for v in sub.terminal_nodes()}
        assert expectation(sub, sub.model('b'), local) == pytest.approx(
            value, abs=1e-12
        )


def test_tower_rule():
    rng = np.random.default_rng(5)
    fam = random_tree_family(rng, periods=3, max_children=3)
    model = fam.models[0]
    g = {v: float(rng.random()) for v in fam.terminal_nodes()}
    later = conditional_expectation(fam, model, g, 2)
    earlier = conditional_expectation(fam, model, g, 1)
    for node_id, value in earlier.items():
        node = fam.nodes[node_id]
        stepped = sum(
            p * later[c]
            for c, p in zip(node.children, model.transitions[node_id])
        )
        assert stepped == pytest.approx(value, abs=1e-12)
    reach = fam.reach[model.name]
    total = sum(reach[v] * earlier[v] for v in fam.levels[1])
    assert total == pytest.approx(expectation(fam, model, g), abs=1e-12)


def test_cylinder_probabilities_at_each_time():
    fam = two_period()
    model = fam.model('b')
    assert cylinder_probabilities(fam, model, 0) == {fam.root: 1.0}
    at_two = cylinder_probabilities(fam, model, 2)
    assert set(at_two) == set(fam.levels[2])
    assert sorted(at_two.values()) == pytest.approx([0.09, 0.21, 0.21, 0.49])


def _kernel_from(fam, law, s):
    kernel = {}
    for node_id in fam.levels[s]:
        subtree = fam.subtree(node_id)
        kernel[node_id] = ModelLaw(
            name=law.name,
            transitions={
                v: law.transitions[v]
                for v in subtree
                if not fam.nodes[v].is_leaf
            },
        )
    return kernel


def test_paste_with_own_conditionals_is_identity():
    fam = two_period()
    base = fam.model('a')
    pasted = paste(fam, base, 1, _kernel_from(fam, base, 1))
    assert dict(pasted.transitions) == dict(base.transitions)


def test_paste_switches_model_after_time():
    fam = two_period()
    kernel = _kernel_from(fam, fam.model('b'), 1)
    pasted = paste(fam, fam.model('a'), 1, kernel)
    assert pasted.transitions['n'] == (0.5, 0.5)
    assert pasted.transitions['n.0'] == (0.3, 0.7)
    assert pasted.name == 'a@1'
    g = {v: 1.0 if v == 'n.0.0' else 0.0 for v in fam.terminal_nodes()}
    assert expectation(fam, pasted, g) == pytest.approx(0.5 * 0.3)


def test_paste_requires_every_reached_node():
    fam = two_period()
    kernel = _kernel_from(fam, fam.model('b'), 1)
    del kernel['n.1']
    with pytest.raises(PastingError, match='does not cover'):
        paste(fam, fam.model('a'), 1, kernel)


def test_paste_rejects_foreign_nodes():
    fam = two_period()
    kernel = _kernel_from(fam, fam.model('b'), 1)
    kernel['n.0'] = ModelLaw(
        name='b', transitions={'n.0': (0.5, 0.5), 'n.1': (0.5, 0.5)}
    )
    with pytest.raises(PastingError, match='foreign'):
        paste(fam, fam.model('a'), 1, kernel)


def test_enumerate_paths_in_preorder():
    fam = two_period()
    assert enumerate_paths(fam) == [
        ('n', 'n.0', 'n.0.0'),
        ('n', 'n.0', 'n.0.1'),
        ('n', 'n.1', 'n.1.0'),
        ('n', 'n.1', 'n.1.1'),
    ]


def test_random_centered_family_is_centered():
    rng = np.random.default_rng(3)
    fam = random_tree_family(rng, periods=2, dim=2, sparse=False)
    for node_id in fam.breadth_first:
        if fam.nodes[node_id].children:
            mean = fam.increments(node_id).mean(axis=0)
            assert np.abs(mean).max() < 1e-9


@pytest.mark.parametrize(
    'overrides,message',
    [
        ({'horizon': 0.0}, 'horizon'),
        ({'steps': 0}, 'time step'),
        ({'drift_lower': (1.0,), 'drift_upper': (0.0,)}, 'drift'),
        (
            {'volatility': VolatilityBox(lower=(0.0,), upper=(0.04,))},
            'Lower volatility',
        ),
        ({'s0': (1.0, 2.0)}, 'dimension'),
    ],
)
def test_invalid_uncertainty_specs(overrides, message):
    with pytest.raises(UncertaintySpecError, match=message):
        make_spec(**overrides)


def test_uncertainty_spec_round_trip():
    spec = make_spec()
    assert UncertaintySpec.from_dict(spec.to_dict()) == spec


def test_volatility_matrices_reject_indefinite():
    with pytest.raises(UncertaintySpecError, match='not positive'):
        make_spec(
            s0=(1.0, 1.0),
            drift_lower=(0.0, 0.0),
            drift_upper=(0.0, 0.0),
            volatility=VolatilityMatrices(
                (((1.0, 2.0), (2.0, 1.0)),)
            ),
        )


def test_simulation_is_deterministic():
    spec = make_spec()
    policy = UniformVolatilityPolicy(spec)
    first = simulate_array(spec, policy, 50, seed=42)
    second = simulate_array(spec, policy, 50, seed=42)
    assert first.shape == (50, 21, 1)
    np.testing.assert_array_equal(first, second)


def test_simulation_does_not_depend_on_path_count():
    spec = make_spec()
    policy = UniformVolatilityPolicy(spec)
    many = simulate_array(spec, policy, 20, seed=1)
    few = simulate_array(spec, policy, 5, seed=1)
    np.testing.assert_array_equal(many[:5], few)


def test_constant_drift_moves_linearly_in_expectation():
    spec = make_spec(
        relative=False,
        drift_lower=(0.5,),
        drift_upper=(0.5,),
        volatility=VolatilityBox(lower=(1e-8,), upper=(1e-8,)),
    )
    policy = ConstantPolicy(drift=np.array([0.5]), vol=np.array([[1e-4]]))
    paths = simulate_array(spec, policy, 3, seed=0)
    np.testing.assert_allclose(
        paths[0, :, 0], 100.0 + 0.5 * spec.grid, atol=1e-3
    )


def test_policy_outside_volatility_set_is_rejected():
    spec = make_spec()
    policy = ConstantPolicy(drift=np.array([0.0]), vol=np.array([[0.5]]))
    with pytest.raises(PolicyError, match='volatility set'):
        simulate_array(spec, policy, 2, seed=0)


def test_policy_outside_drift_set_is_rejected():
    spec = make_spec()
    policy = ConstantPolicy(drift=np.array([1.0]), vol=np.array([[0.15]]))
    with pytest.raises(PolicyError, match='drift set'):
        simulate_array(spec, policy, 2, seed=0)


def test_bang_bang_policy_stays_in_set():
    spec = make_spec()
    policy = BangBangVolatilityPolicy(spec, lambda t, x: x[:, 0] > 100.0)
    paths = simulate_paths(spec, policy, 4, seed=9)
    assert len(paths) == 4
    assert all(p.values[0] == (100.0,) for p in paths)
    assert all(None not in p.values for p in paths)
