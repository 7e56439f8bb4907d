import json
import math

import numpy as np
import pytest

from dichotomy import model
from dichotomy.cocycle import stabilized_chain
from dichotomy.hyperbolicity import (EPSILON_LADDER, R_LADDER, SplittingError, SubspaceFrame, analyze,
                                     angle_gap, bounded_orbit_search, check_invariance, growth_indicator,
                                     joint_rank, sphere_directions, splitting, splitting_orbit,
                                     subspace_distance, ug_certify)

M_SMALL = (3 - math.sqrt(5)) / 2
M_LARGE = (3 + math.sqrt(5)) / 2
TRIG = model.matrix_trig([[1.0, 0.5], [0.5, -1.0]], [[0.0, 1.0], [1.0, 2.0]])
BLOCK = model.constant_block(np.diag([0.0, 5.0]))


def _unit(v):
    v = np.asarray(v, dtype=float)[:, None]
    return v / np.linalg.norm(v)


def test_growth_free_hyperbolic():
    g = growth_indicator(model.free(), 3.0, [(0.0,), (0.5,)], 256)
    assert g.lambda_estimate == pytest.approx(M_LARGE, rel=1e-2)


def test_growth_free_elliptic_is_flat():
    g = growth_indicator(model.free(), 0.0, [(0.0,)], 256)
    assert abs(g.max_slope) < 1e-6


def test_growth_near_band_edge():
    # m + 1/m = 2.05 gives m = 1.25
    g = growth_indicator(model.free(), 2.05, [(0.0,)], 512)
    assert math.log(g.lambda_estimate) == pytest.approx(math.log(1.25), rel=2e-2)


def test_growth_needs_sensible_input():
    with pytest.raises(ValueError):
        growth_indicator(model.free(), 3.0, [(0.0,)], 8)
    with pytest.raises(ValueError):
        growth_indicator(model.free(), 3.0, [], 64)


def test_sphere_directions_are_unit_and_deterministic():
    a = sphere_directions(4, 100)
    assert a.shape == (100, 4)
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0)
    assert np.array_equal(a, sphere_directions(4, 100))


def test_certify_free_z3_with_fixed_pair():
    c = ug_certify(model.free(), 3.0, 0.5, 2)
    assert c.certified and c.verdict == "certified-UG"
    assert c.epsilon == 0.5 and c.R == 2
    assert c.worst_norm >= 1.5


def test_certify_ladder_prefers_small_windows():
    c = ug_certify(model.free(), 3.0)
    assert (c.epsilon, c.R) == (0.5, 1)
    # the dense-sweep oracle for max(|A v|, |A^-1 v|) over unit v
    t = np.linspace(0, np.pi, 200001)
    V = np.stack([np.cos(t), np.sin(t)])
    A = np.array([[3.0, -1.0], [1.0, 0.0]])
    oracle = np.min(np.maximum(np.linalg.norm(A @ V, axis=0), np.linalg.norm(np.linalg.solve(A, V), axis=0)))
    assert c.worst_norm == pytest.approx(oracle, rel=1e-8)


def test_certify_refutes_isometric_cocycle():
    c = ug_certify(model.free(), 0.0, 0.1, 64)
    assert c.verdict == "refuted-UG" and not c.certified
    assert c.worst_norm == pytest.approx(1.0, abs=1e-12)


def test_certify_refutes_parabolic_point():
    c = ug_certify(model.free(), 2.0, 0.1, 64)
    assert c.verdict == "refuted-UG"
    assert c.worst_norm <= 1.05
    # the bounded direction is (1, 1) / sqrt(2), fixed by [[2, -1], [1, 0]]
    assert subspace_distance(c.worst_vector[:, None], _unit([1, 1])) < 1e-4


def test_certificate_serializes():
    d = ug_certify(model.free(), 2.0, 0.1, 8).to_dict()
    json.dumps(d)
    assert d["counterexample"]["sup_norm"] <= 1.05
    assert d["grids"]["sphere_samples"] == 512


def test_certify_rejects_bad_parameters():
    with pytest.raises(ValueError):
        ug_certify(model.free(), 3.0, 0.0, 2)
    with pytest.raises(ValueError):
        ug_certify(model.free(), 3.0, 0.5, 0)


def test_splitting_free_z3_eigendirections():
    s, u = splitting(model.free(), 3.0, (0.0,), N=64)
    assert subspace_distance(s.columns, _unit([M_SMALL, 1])) < 1e-6
    assert subspace_distance(u.columns, _unit([M_LARGE, 1])) < 1e-6
    assert s.orthonormality_defect() < 1e-10 and u.orthonormality_defect() < 1e-10


def test_angle_gap_free_z3():
    frames = splitting_orbit(model.free(), 3.0, (0.0,), 64, 4)
    assert angle_gap(frames) == pytest.approx(math.acos(2 / 3), abs=1e-3)


def test_angle_gap_degenerate_cases():
    e1, e2 = _unit([1, 0]), _unit([0, 1])
    assert angle_gap([(e1, e1)]) == pytest.approx(0.0, abs=1e-12)
    assert angle_gap([(e1, e2)]) == pytest.approx(math.pi / 2)
    with pytest.raises(ValueError):
        angle_gap([])


def test_invariance_free_z3():
    chk = check_invariance(model.free(), 3.0, (0.0,), steps=10)
    assert chk.status == "ok" and chk.defect < 1e-6


def test_invariance_refuses_without_gap():
    chk = check_invariance(model.free(), 0.0, (0.0,))
    assert chk.status == "inconclusive" and chk.defect is None
    with pytest.raises(SplittingError) as err:
        splitting(model.free(), 0.0, (0.0,))
    assert abs(err.value.gap) < 1e-6


def test_invariance_cosine_far_outside():
    # |z| > 2 + 2 max|V| = 6
    for z in (7.0, -7.0):
        chk = check_invariance(model.cosine(2.0), z, (0.3,), steps=10)
        assert chk.status == "ok" and chk.defect < 1e-5


def test_splitting_mixed_channels_is_transversal():
    frames = splitting_orbit(TRIG, 9.0, (0.1,), 64, 6)
    for s, u in frames:
        assert s.columns.shape == (4, 2)
        assert joint_rank(s, u) == 4
    assert check_invariance(TRIG, 9.0, (0.1,), frames=frames, steps=6).defect < 1e-6


def test_bounded_orbit_isometric_and_elliptic():
    assert bounded_orbit_search(model.free(), 0.0).sup_norm == pytest.approx(1.0, abs=1e-12)
    # [[1, -1], [1, 0]] has sixth power I
    b = bounded_orbit_search(model.free(), 1.0, N=64)
    assert b.sup_norm <= 2.0
    assert b.profile.shape == (129,)


def test_bounded_orbit_hyperbolic_grows():
    b = bounded_orbit_search(model.free(), 3.0, N=64)
    g = growth_indicator(model.free(), 3.0, [(0.0,)], 64)
    assert b.sup_norm > 1e10
    assert b.sup_norm >= g.beta_estimate * g.lambda_estimate ** 32


def test_exactly_l_split_at_certified_points():
    for f, z, p in [(model.free(), 3.0, (0.2,)), (BLOCK, 9.0, (0.0,)), (TRIG, 9.0, (0.4,)),
                    (model.cosine(2.0), -7.0, (0.1,))]:
        assert ug_certify(f, z, base_resolution=16).certified
        l = f.l
        prev = 0.0
        for N in (16, 32, 64):
            ls = stabilized_chain(f, z, p, N).log_svals[-1]
            assert ls[l - 1] >= 0 >= ls[l]
            gap = ls[l - 1] - ls[l]
            assert gap > prev
            prev = gap


def test_openness_free_z3():
    held = 0
    for eps in EPSILON_LADDER:
        for R in R_LADDER:
            c = ug_certify(model.free(), 3.0, eps, R)
            if not c.certified:
                continue
            held += 1
            for h in (1e-4, -1e-4):
                c2 = ug_certify(model.free(), 3.0 + h, eps, R)
                assert c2.certified and (c2.epsilon, c2.R) == (eps, R)
    assert held == len(EPSILON_LADDER) * len(R_LADDER)


def test_verdict_consistency():
    for f in (model.free(), model.cosine(2.0)):
        for z in (-7.0, -2.01, -1.0, 0.5, 2.01, 2.5, 7.0):
            c = ug_certify(f, z, base_resolution=16)
            b = bounded_orbit_search(f, z, base_resolution=16)
            assert not (c.certified and b.sup_norm <= 1 + 1e-6)


def test_analyze_report():
    rep = analyze(model.free(), 3.0, base_resolution=8)
    assert rep.verdict == "certified-UG"
    assert rep.min_angle_gap == pytest.approx(math.acos(2 / 3), abs=1e-3)
    assert rep.lambda_estimate == pytest.approx(M_LARGE, rel=1e-2)
    json.dumps(rep.to_dict())
    rep = analyze(model.free(), 0.5, base_resolution=8)
    assert rep.verdict == "refuted-UG" and rep.splitting is None and rep.counterexample is not None


def test_frame_from_plain_arrays():
    s = SubspaceFrame((0.0,), np.eye(2)[:, :1], "stable")
    assert s.orthonormality_defect() == 0.0
