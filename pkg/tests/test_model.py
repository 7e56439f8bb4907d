import numpy as np
import pytest

from dichotomy import model
from dichotomy.dynamics import rotation, sample_base
from dichotomy.model import JacobiFamily, MatrixField, ModelError, constant_field, eval_fields, orbit_fields, validate

TRIG_A = [[1.0, 0.5], [0.5, -1.0]]
TRIG_B = [[0.0, 1.0], [1.0, 2.0]]


def presets():
    return [
        model.free(),
        model.free(l=3),
        model.constant_block(np.diag([0.0, 5.0])),
        model.cosine(2.0),
        model.matrix_trig(TRIG_A, TRIG_B),
        model.periodic([1.0, 1.0], [0.0, 1.5]),
        model.periodic([[[1.0, 0.2], [0.2, 2.0]], [[1.5, 0.0], [0.0, 0.7]]],
                       [[[0.0, 1.0], [1.0, 0.0]], [[2.0, 0.0], [0.0, -1.0]]]),
    ]


def test_free_fields():
    D, V = eval_fields(model.free(), (0.37,))
    assert D.tolist() == [[1.0]] and V.tolist() == [[0.0]]


def test_cosine_at_origin():
    _, V = eval_fields(model.cosine(2.0), (0.0,))
    assert V[0, 0] == 2.0


def test_constant_block_fields():
    D, V = eval_fields(model.constant_block(np.diag([0.0, 5.0])), (0.9,))
    assert np.array_equal(D, np.eye(2))
    assert np.array_equal(V, np.diag([0.0, 5.0]))


def test_validate_free():
    rep = validate(model.free(), sample_base(rotation(), 100))
    assert rep.passed and rep.samples == 100
    assert rep.v_symmetry_defect == 0.0 and rep.min_d_singular_value == 1.0


def test_validate_asymmetric_v():
    f = model.constant_block([[0.0, 1.0], [0.0, 0.0]])
    rep = validate(f, sample_base(rotation(), 10))
    assert not rep.passed
    assert rep.v_symmetry_defect == 1.0
    assert "V not symmetric" in rep.messages[0]


def test_validate_singular_d_names_point():
    D = MatrixField(1, batch=lambda x: np.cos(2 * np.pi * np.asarray(x)[:, 0])[:, None, None])
    f = JacobiFamily(rotation(), 1, D, constant_field([[0.0]]))
    rep = validate(f, [(0.0,), (0.25,), (0.6,)])
    assert not rep.passed
    assert rep.min_d_singular_value < 1e-15
    assert rep.worst_d_point == (0.25,)


def test_validate_needs_samples():
    with pytest.raises(ValueError):
        validate(model.free(), [])


def test_non_finite_field_is_reported():
    V = MatrixField(1, func=lambda p: [[np.inf if p[0] > 0.5 else 0.0]], description="bad")
    f = JacobiFamily(rotation(), 1, constant_field([[1.0]]), V)
    with pytest.raises(ModelError, match="bad is not finite at"):
        eval_fields(f, (0.75,))


def test_every_preset_validates_on_dense_samples():
    for f in presets():
        pts = sample_base(f.base, 1000)
        rep = validate(f, pts)
        assert rep.passed, (f.name, rep.messages)
        assert rep.v_symmetry_defect < 1e-12


def test_evaluation_is_reproducible():
    f = model.matrix_trig(TRIG_A, TRIG_B)
    a = eval_fields(f, (0.123,))
    b = eval_fields(f, (0.123,))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_orbit_fields_follow_the_base():
    f = model.cosine(2.0)
    D, V = orbit_fields(f, (0.1,), -3, 4)
    x = (0.1 + np.arange(-3, 4) * rotation().alpha[0]) % 1.0
    assert np.allclose(V[:, 0, 0], 2 * np.cos(2 * np.pi * x), atol=1e-13)
    assert not V.flags.writeable


def test_periodic_tables_need_matching_shapes():
    with pytest.raises(ValueError):
        model.periodic([1.0, 1.0], [0.0, 1.0, 2.0])


def test_matrix_trig_needs_torus():
    from dichotomy.dynamics import cycle
    with pytest.raises(ValueError):
        model.matrix_trig(TRIG_A, TRIG_B, base=cycle(2))
