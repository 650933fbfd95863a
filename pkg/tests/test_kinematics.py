import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from egowm.kinematics import (
    ACTION_DIM,
    Action,
    BodyPose,
    JointLimits,
    JointMapError,
    KinematicsError,
    XsensPose,
    action_between,
    apply_action,
    flatten_action,
    forward_kinematics,
    load_joint_map,
    load_topology,
    smpl_to_xsens,
    unflatten_action,
    xsens_to_smpl,
)

TOPO = load_topology()
JMAP = load_joint_map(TOPO)

finite = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)
vec69 = arrays(np.float64, (ACTION_DIM,), elements=finite)


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def oracle_fk(pose, topo):
    """Loop FK built from elementary rotations (intrinsic X, then Y, then Z)."""
    n = topo.joint_count
    pos = np.zeros((n, 3))
    rot = np.zeros((n, 3, 3))
    for j in range(n):
        ax, ay, az = pose.joint_euler[j]
        local = rot_x(ax) @ rot_y(ay) @ rot_z(az)
        p = topo.parent_index[j]
        if p < 0:
            pos[j] = pose.root_translation
            rot[j] = local
        else:
            pos[j] = pos[p] + rot[p] @ topo.rest_offset[j]
            rot[j] = rot[p] @ local
    return pos, rot


def random_pose(rng, scale=1.0):
    return BodyPose(rng.normal(size=3), rng.uniform(-scale, scale, size=(22, 3)))


def dyadic(rng, shape, bound=1.0):
    """Multiples of 2**-20 in [-bound, bound]."""
    return rng.integers(-int(bound * 2**20), int(bound * 2**20) + 1, size=shape) / 2**20


def dyadic_pose(rng):
    return BodyPose(dyadic(rng, 3, 4.0), dyadic(rng, (22, 3), 1.5))


def random_action(rng, scale=0.3):
    return Action(rng.normal(size=3) * scale, rng.normal(size=(22, 3)) * scale)


class TestActionCodec:
    def test_zero_action_flattens_to_zeros(self):
        v = flatten_action(Action.zeros())
        assert v.shape == (69,)
        assert not v.any()

    def test_length_is_69(self):
        assert ACTION_DIM == 69
        assert flatten_action(random_action(np.random.default_rng(0))).shape == (69,)

    def test_layout(self):
        a = Action(np.array([1.0, 2.0, 3.0]), np.arange(66, dtype=float).reshape(22, 3) + 10)
        v = flatten_action(a)
        assert v[:3].tolist() == [1.0, 2.0, 3.0]
        assert v[3:6].tolist() == [10.0, 11.0, 12.0]
        assert v[-3:].tolist() == [73.0, 74.0, 75.0]

    def test_round_trip_100_random(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a = random_action(rng)
            assert unflatten_action(flatten_action(a)) == a

    @given(vec69)
    def test_bijection_property(self, v):
        assert np.array_equal(flatten_action(unflatten_action(v)), v)

    def test_wrong_length_rejected(self):
        with pytest.raises(KinematicsError):
            unflatten_action(np.zeros(68))


class TestApplyAction:
    def test_zero_action_is_identity(self):
        p = random_pose(np.random.default_rng(2))
        assert apply_action(p, Action.zeros()) == p

    def test_between_inverts_apply_unclamped(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            p = random_pose(rng, 1.0)
            a = random_action(rng, 0.3)
            q = apply_action(p, a)
            b = action_between(p, q)
            # floating subtraction need not reproduce a bit-for-bit
            np.testing.assert_allclose(flatten_action(b), flatten_action(a), atol=1e-12)
            assert apply_action(p, b) == q

    def test_apply_between_exact_on_dyadic_grid(self):
        # sums and differences of grid values are exactly representable
        rng = np.random.default_rng(4)
        for _ in range(100):
            p1, p2 = dyadic_pose(rng), dyadic_pose(rng)
            assert apply_action(p1, action_between(p1, p2)) == p2

    def test_apply_between_general_floats_within_one_ulp(self):
        rng = np.random.default_rng(40)
        for _ in range(100):
            p1, p2 = random_pose(rng), random_pose(rng)
            q = apply_action(p1, action_between(p1, p2), limits=None)
            assert np.all(np.abs(q.joint_euler - p2.joint_euler) <= np.spacing(np.maximum(np.abs(p1.joint_euler), np.abs(p2.joint_euler))))

    def test_between_is_componentwise_difference(self):
        rng = np.random.default_rng(5)
        p1, p2 = random_pose(rng), random_pose(rng)
        a = action_between(p1, p2)
        assert np.array_equal(a.delta_root, p2.root_translation - p1.root_translation)
        assert np.array_equal(a.delta_joint_euler, p2.joint_euler - p1.joint_euler)

    def test_between_same_pose_is_zero(self):
        p = random_pose(np.random.default_rng(6))
        assert action_between(p, p) == Action.zeros()

    def test_limit_clamp_matches_oracle(self):
        limits = JointLimits.symmetric(1.0)
        p = BodyPose(np.zeros(3), np.full((22, 3), 0.8))
        a = Action(np.zeros(3), np.full((22, 3), 0.5))
        a.delta_joint_euler[3] = -2.5
        q = apply_action(p, a, limits)
        expect = np.minimum(np.maximum(p.joint_euler + a.delta_joint_euler, -1.0), 1.0)
        assert np.array_equal(q.joint_euler, expect)
        assert q.joint_euler[0, 0] == 1.0 and q.joint_euler[3, 0] == -1.0

    def test_root_delta_is_world_frame(self):
        p = BodyPose(np.array([1.0, 0.0, 0.0]), np.zeros((22, 3)))
        p.joint_euler[0, 1] = 1.2  # heading does not rotate the translation delta
        q = apply_action(p, Action(np.array([0.0, 0.0, 0.5]), np.zeros((22, 3))))
        assert q.root_translation.tolist() == [1.0, 0.0, 0.5]

    def test_non_finite_rejected(self):
        p = BodyPose.zeros()
        a = Action.zeros()
        a.delta_root[0] = np.nan
        with pytest.raises(KinematicsError):
            apply_action(p, a)
        with pytest.raises(KinematicsError):
            apply_action(BodyPose(np.array([np.inf, 0, 0]), np.zeros((22, 3))), Action.zeros())


class TestForwardKinematics:
    def test_zero_pose_is_cumulative_offsets(self):
        fk = forward_kinematics(BodyPose.zeros(), TOPO)
        expect = np.zeros((22, 3))
        for j in range(1, 22):
            expect[j] = expect[TOPO.parent_index[j]] + TOPO.rest_offset[j]
        np.testing.assert_allclose(fk.positions, expect, atol=1e-15)

    def test_matches_elementary_rotation_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            p = random_pose(rng, np.pi)
            fk = forward_kinematics(p, TOPO)
            pos, rot = oracle_fk(p, TOPO)
            np.testing.assert_allclose(fk.positions, pos, atol=1e-12)
            np.testing.assert_allclose(fk.rotations, rot, atol=1e-12)

    def test_root_translation_shifts_all_joints(self):
        rng = np.random.default_rng(8)
        p = random_pose(rng)
        d = np.array([0.3, -1.1, 2.0])
        q = BodyPose(p.root_translation + d, p.joint_euler)
        a, b = forward_kinematics(p, TOPO), forward_kinematics(q, TOPO)
        np.testing.assert_allclose(b.positions, a.positions + d, atol=1e-12)
        np.testing.assert_allclose(b.left_eye, a.left_eye + d, atol=1e-12)

    def test_bone_lengths_invariant_50_poses(self):
        rng = np.random.default_rng(9)
        rest = np.linalg.norm(TOPO.rest_offset, axis=1)
        for _ in range(50):
            pos = forward_kinematics(random_pose(rng, np.pi), TOPO).positions
            for j in range(1, 22):
                assert abs(np.linalg.norm(pos[j] - pos[TOPO.parent_index[j]]) - rest[j]) < 1e-9

    def test_eyes_follow_head(self):
        fk = forward_kinematics(BodyPose.zeros(), TOPO)
        h = TOPO.head_joint_index
        np.testing.assert_allclose(fk.left_eye, fk.positions[h] + TOPO.eye_offsets[0])
        np.testing.assert_allclose(fk.right_eye, fk.positions[h] + TOPO.eye_offsets[1])

    def test_size_mismatch(self):
        with pytest.raises(KinematicsError):
            forward_kinematics(BodyPose(np.zeros(3), np.zeros((21, 3))), TOPO)

    def test_default_topology_shape(self):
        assert TOPO.joint_count == 22
        assert TOPO.parent_index[0] == -1
        np.testing.assert_allclose(np.abs(TOPO.eye_offsets[:, 0]), 0.03)
        np.testing.assert_allclose(TOPO.eye_offsets[:, 2], 0.08)


class TestTopologyFile:
    def test_dict_round_trip(self):
        from egowm.kinematics import SkeletonTopology

        t = SkeletonTopology.from_dict(TOPO.to_dict())
        assert t.joint_names == TOPO.joint_names
        assert np.array_equal(t.rest_offset, TOPO.rest_offset)

    def test_unknown_version_rejected(self):
        from egowm.kinematics import SkeletonTopology

        d = TOPO.to_dict()
        d["format_version"] = 99
        with pytest.raises(KinematicsError):
            SkeletonTopology.from_dict(d)

    def test_cycle_rejected(self):
        from egowm.kinematics import SkeletonTopology

        d = TOPO.to_dict()
        d["parent_index"][3] = 5
        with pytest.raises(KinematicsError):
            SkeletonTopology.from_dict(d)


def random_xsens(rng):
    return XsensPose(rng.normal(size=3), rng.uniform(-np.pi, np.pi, size=(23, 3)))


class TestXsens:
    def test_l3_only_pose_maps_to_zero(self):
        e = np.zeros((23, 3))
        e[JMAP.dropped_xsens] = [0.4, -1.0, 2.0]
        p = xsens_to_smpl(XsensPose(np.zeros(3), e), JMAP)
        assert p == BodyPose.zeros()

    def test_output_has_22_joints(self):
        p = xsens_to_smpl(random_xsens(np.random.default_rng(10)), JMAP)
        assert p.joint_euler.shape == (22, 3)

    def test_torso_chain_order(self):
        names = TOPO.joint_names
        l5, l3, t12, t8 = JMAP.torso_xsens
        spines = [JMAP.xsens_to_smpl[i] for i in (l5, t12, t8)]
        assert [names[i] for i in spines] == ["spine1", "spine2", "spine3"]
        assert l3 == JMAP.dropped_xsens

    def test_l3_duplicates_l5(self):
        rng = np.random.default_rng(11)
        p = BodyPose(rng.normal(size=3), rng.normal(size=(22, 3)))
        x = smpl_to_xsens(p, JMAP)
        l5, l3 = JMAP.torso_xsens[:2]
        assert np.array_equal(x.joint_euler[l3], x.joint_euler[l5])
        assert np.array_equal(x.joint_euler[l5], p.joint_euler[JMAP.xsens_to_smpl[l5]])

    def test_zero_pose(self):
        x = smpl_to_xsens(BodyPose.zeros(), JMAP)
        assert not x.joint_euler.any() and not x.root_translation.any()

    def test_round_trips(self):
        rng = np.random.default_rng(12)
        keep = [i for i in range(23) if i != JMAP.dropped_xsens]
        for _ in range(100):
            p = BodyPose(rng.normal(size=3), rng.normal(size=(22, 3)))
            assert xsens_to_smpl(smpl_to_xsens(p, JMAP), JMAP) == p
            x = random_xsens(rng)
            back = smpl_to_xsens(xsens_to_smpl(x, JMAP), JMAP)
            assert np.array_equal(back.joint_euler[keep], x.joint_euler[keep])

    def test_wrong_joint_count(self):
        with pytest.raises(KinematicsError):
            XsensPose(np.zeros(3), np.zeros((22, 3)))

    def test_malformed_map_rejected(self):
        import json
        from importlib import resources

        from egowm.kinematics import JointMap

        data = json.loads(resources.files("egowm.data").joinpath("xsens_smpl_map.json").read_text())
        bad = json.loads(json.dumps(data))
        key = next(iter(bad["non_torso"]))
        del bad["non_torso"][key]
        with pytest.raises(JointMapError):
            JointMap.from_dict(bad, TOPO)
        bad = json.loads(json.dumps(data))
        bad["torso"] = dict(reversed(list(bad["torso"].items())))
        with pytest.raises(JointMapError):
            JointMap.from_dict(bad, TOPO)

    @settings(max_examples=50)
    @given(arrays(np.float64, (22, 3), elements=finite))
    def test_smpl_round_trip_property(self, euler):
        p = BodyPose(np.zeros(3), euler)
        assert xsens_to_smpl(smpl_to_xsens(p, JMAP), JMAP) == p
