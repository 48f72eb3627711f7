import math

import numpy as np
import pytest

from coverage_inekf import se23
from coverage_inekf.se23 import (
    OUTPUT_D,
    Se23Element,
    act_on_d,
    compose,
    exp_se23,
    hat,
    inverse,
    log_se23,
    vee,
)


def series_exp(m: np.ndarray, terms: int = 20) -> np.ndarray:
    """Truncated matrix-power series oracle for the exponential."""
    out = np.eye(m.shape[0])
    acc = np.eye(m.shape[0])
    for k in range(1, terms):
        acc = acc @ m / k
        out = out + acc
    return out


def random_tangent(rng, scale=1.0):
    v = rng.standard_normal(9)
    return scale * v / np.linalg.norm(v)


def random_element(rng, angle_scale=1.0):
    v = rng.standard_normal(9)
    v[0:3] *= angle_scale / max(np.linalg.norm(v[0:3]), 1e-12)
    return exp_se23(v)


class TestHatVee:
    def test_zero_vector(self):
        assert np.array_equal(hat(np.zeros(9)), np.zeros((5, 5)))

    def test_unit_z_rotation_block(self):
        m = hat(np.array([0.0, 0.0, 1.0, 0, 0, 0, 0, 0, 0]))
        expected = np.zeros((5, 5))
        expected[:3, :3] = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]])
        assert np.array_equal(m, expected)

    def test_roundtrip_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            v = rng.standard_normal(9)
            assert np.array_equal(vee(hat(v)), v)

    def test_vee_zero(self):
        assert np.array_equal(vee(np.zeros((5, 5))), np.zeros(9))

    def test_vee_rejects_pattern_violation(self):
        m = np.zeros((5, 5))
        m[3, 0] = 1e-6
        with pytest.raises(ValueError):
            vee(m)

    def test_vee_rejects_nonskew_block(self):
        m = np.zeros((5, 5))
        m[0, 0] = 1e-6
        with pytest.raises(ValueError):
            vee(m)


class TestExpLog:
    def test_exp_zero_is_identity(self):
        x = exp_se23(np.zeros(9))
        assert np.allclose(x.as_matrix(), np.eye(5), atol=0)

    def test_quarter_turn_about_z(self):
        v = np.zeros(9)
        v[2] = math.pi / 2
        x = exp_se23(v)
        expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
        assert np.allclose(x.rot, expected, atol=1e-12)
        assert np.allclose(x.vel, 0) and np.allclose(x.pos, 0)

    def test_exp_matches_series_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            v = random_tangent(rng, scale=rng.uniform(0.01, 1.0))
            assert np.allclose(
                exp_se23(v).as_matrix(), series_exp(hat(v)), atol=1e-10
            )

    def test_first_order_approximation(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            v = random_tangent(rng, scale=1e-5)
            err = np.abs(exp_se23(v).as_matrix() - (np.eye(5) + hat(v))).max()
            assert err <= 1e-9

    def test_log_identity(self):
        assert np.allclose(log_se23(Se23Element.identity()), 0, atol=0)

    def test_log_exp_roundtrip(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            v = random_tangent(rng, scale=rng.uniform(1e-8, 1.0))
            assert np.linalg.norm(log_se23(exp_se23(v)) - v) <= 1e-9

    def test_exp_log_roundtrip_on_group(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            x = random_element(rng, angle_scale=rng.uniform(0.1, 3.0))
            y = exp_se23(log_se23(x))
            assert np.allclose(y.as_matrix(), x.as_matrix(), atol=1e-9)

    def test_log_rejects_pi_rotation(self):
        v = np.zeros(9)
        v[0] = math.pi
        x = exp_se23(v)
        with pytest.raises(ValueError):
            log_se23(x)


class TestGroupOps:
    def test_inverse_of_identity(self):
        x = inverse(Se23Element.identity())
        assert np.allclose(x.as_matrix(), np.eye(5), atol=0)

    def test_inverse_of_pure_translation(self):
        p = np.array([1.0, -2.0, 3.0])
        x = Se23Element(np.eye(3), np.zeros(3), p)
        assert np.allclose(inverse(x).pos, -p, atol=0)

    def test_inverse_matches_dense_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            x = random_element(rng)
            assert np.allclose(
                inverse(x).as_matrix(), np.linalg.inv(x.as_matrix()), atol=1e-10
            )

    def test_compose_times_inverse_is_identity(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            x = random_element(rng)
            assert np.allclose(
                compose(x, inverse(x)).as_matrix(), np.eye(5), atol=1e-12
            )

    def test_compose_matches_dense_product(self):
        rng = np.random.default_rng(7)
        a, b = random_element(rng), random_element(rng)
        assert np.allclose(
            compose(a, b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-12
        )

    def test_long_chain_stays_orthonormal(self):
        rng = np.random.default_rng(8)
        x = Se23Element.identity()
        step = random_element(rng, angle_scale=0.3)
        for _ in range(1000):
            x = compose(x, step)
        x.check_valid(atol=1e-9)


class TestInvariantOutput:
    def test_identity_pose_gives_zero_velocity(self):
        out = act_on_d(inverse(Se23Element.identity()), OUTPUT_D)
        assert np.allclose(out, [0, 0, 0, -1, 0], atol=0)

    def test_block_form_value(self):
        # X with identity rotation and vel (1,0,0): output is the body-frame
        # velocity with the homogeneous constants (-1, 0) appended.
        x = Se23Element(np.eye(3), np.array([1.0, 0, 0]), np.zeros(3))
        out = act_on_d(inverse(x), OUTPUT_D)
        assert np.allclose(out, [1, 0, 0, -1, 0], atol=1e-15)

    def test_matches_dense_product_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            x = random_element(rng)
            xinv = inverse(x)
            assert np.allclose(
                act_on_d(xinv, OUTPUT_D), xinv.as_matrix() @ OUTPUT_D, atol=1e-12
            )

    def test_output_is_body_frame_velocity(self):
        rng = np.random.default_rng(10)
        x = random_element(rng)
        out = act_on_d(inverse(x), OUTPUT_D)
        assert np.allclose(out[:3], x.rot.T @ x.vel, atol=1e-12)
