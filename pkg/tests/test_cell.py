"""Cell parameter container, per-step operations, forward pass, model file."""
import dataclasses
import math

import numpy as np
import pytest

from drnn import (CellParams, CellState, dos_acceleration, dos_velocity,
                  forward_sequence, gate_forget, gate_input, gate_output,
                  load_params, pre_state, save_params, step, update_state)

from .oracles import gate_preactivation, reference_lstm, scalar_sigmoid


def small_params(order, seed=0, scale=0.3, n=5, m=4, k=3):
    return CellParams.random(order, n, m, k, seed=seed, scale=scale)


class TestCellParams:
    def test_shapes_per_order(self):
        for order in (0, 1, 2):
            p = CellParams.zeros(order, 5, 4, 3)
            assert len(p.W_id) == len(p.W_fd) == len(p.W_od) == order + 1
            for mat in p.W_id + p.W_fd:
                assert mat.shape == (4, 4)
            for mat in p.W_od:
                assert mat.shape == (3, 4)
            assert p.W_iz.shape == (4, 3) and p.W_oz.shape == (3, 3)
            assert p.W_ix.shape == (4, 5) and p.W_ox.shape == (3, 5)
            assert p.W_sz.shape == (4, 3) and p.W_sx.shape == (4, 5)
            assert p.W_zs.shape == (3, 4)
            assert p.b_i.shape == p.b_f.shape == p.b_s.shape == (4,)
            assert p.b_o.shape == p.b_z.shape == (3,)

    def test_output_gate_family_is_output_sized(self):
        # the gate multiplies the readout elementwise, so it cannot be state sized
        p = small_params(2)
        assert all(mat.shape == (3, 4) for mat in p.W_od)
        assert p.b_o.shape == (3,)

    def test_named_arrays_count_and_order(self):
        p = small_params(2)
        names = [n for n, _ in p.named_arrays()]
        assert names[:9] == ["W_id0", "W_id1", "W_id2", "W_fd0", "W_fd1",
                             "W_fd2", "W_od0", "W_od1", "W_od2"]
        assert len(names) == len(set(names)) == 23

    def test_validation_rejects_bad_shape(self):
        p = small_params(1)
        with pytest.raises(ValueError, match="W_sx"):
            dataclasses.replace(p, W_sx=np.zeros((4, 6)))
        with pytest.raises(ValueError, match="b_o"):
            dataclasses.replace(p, b_o=np.zeros(4))

    def test_validation_rejects_wrong_matrix_count(self):
        p = small_params(2)
        with pytest.raises(ValueError, match="W_id"):
            dataclasses.replace(p, W_id=p.W_id[:2])

    def test_validation_rejects_bad_order(self):
        with pytest.raises(ValueError, match="order"):
            CellParams.zeros(3, 5, 4, 3)

    def test_random_is_seed_deterministic(self):
        a = small_params(1, seed=9)
        b = small_params(1, seed=9)
        for (_, x), (_, y) in zip(a.named_arrays(), b.named_arrays()):
            np.testing.assert_array_equal(x, y)
        c = small_params(1, seed=10)
        assert any(not np.array_equal(x, y) for (_, x), (_, y)
                   in zip(a.named_arrays(), c.named_arrays()))

    def test_random_bounds_and_zero_biases(self):
        p = small_params(2, scale=0.05)
        for name, arr in p.named_arrays():
            if name.startswith("b_"):
                assert np.all(arr == 0)
            else:
                assert np.all(np.abs(arr) <= 0.05)

    def test_copy_is_independent(self):
        p = small_params(1)
        q = p.copy()
        q.W_sx[0, 0] += 1.0
        assert p.W_sx[0, 0] != q.W_sx[0, 0]


class TestCellState:
    def test_initial_is_all_zero(self):
        st = CellState.initial(4, 3)
        for arr in (st.s_curr, st.s_prev, st.s_prev2):
            np.testing.assert_array_equal(arr, np.zeros(4))
        np.testing.assert_array_equal(st.z_prev, np.zeros(3))
        assert st.t == 0


class TestGateOps:
    def test_gates_match_scalar_oracle(self):
        rng = np.random.default_rng(11)
        for order in (0, 1, 2):
            p = small_params(order, seed=order)
            dos = [rng.standard_normal(4) for _ in range(order + 1)]
            z = rng.standard_normal(3)
            x = rng.standard_normal(5)
            for gate, Wd, Wz, Wx, b in (
                (gate_input, p.W_id, p.W_iz, p.W_ix, p.b_i),
                (gate_forget, p.W_fd, p.W_fz, p.W_fx, p.b_f),
            ):
                pre = gate_preactivation([w.tolist() for w in Wd],
                                         [d.tolist() for d in dos],
                                         Wz.tolist(), z.tolist(),
                                         Wx.tolist(), x.tolist(), b.tolist())
                expected = [scalar_sigmoid(v) for v in pre]
                np.testing.assert_allclose(gate(dos, z, x, p), expected,
                                           rtol=1e-13, atol=1e-14)
            pre = gate_preactivation([w.tolist() for w in p.W_od],
                                     [d.tolist() for d in dos],
                                     p.W_oz.tolist(), z.tolist(),
                                     p.W_ox.tolist(), x.tolist(), p.b_o.tolist())
            expected = [scalar_sigmoid(v) for v in pre]
            np.testing.assert_allclose(gate_output(dos, z, x, p), expected,
                                       rtol=1e-13, atol=1e-14)

    def test_gate_rejects_wrong_stack_depth(self):
        p = small_params(1)
        z, x = np.zeros(3), np.zeros(5)
        with pytest.raises(ValueError):
            gate_input([np.zeros(4)], z, x, p)  # order 1 needs two entries
        with pytest.raises(ValueError):
            gate_input([np.zeros(4)] * 3, z, x, p)

    def test_pre_state_is_squashed_affine(self):
        p = small_params(0, seed=3)
        z = np.array([0.1, -0.2, 0.3])
        x = np.array([1.0, 0.0, -1.0, 0.5, 2.0])
        expected = np.tanh(p.W_sz @ z + p.W_sx @ x + p.b_s)
        np.testing.assert_allclose(pre_state(z, x, p), expected, rtol=1e-15)

    def test_update_state_known_value(self):
        out = update_state(f_t=np.array([0.5, 0.5]), i_t=np.array([0.5, 0.5]),
                           s_prev=np.array([2.0, -2.0]),
                           s_half=np.array([1.0, 1.0]))
        np.testing.assert_array_equal(out, [1.5, -0.5])


class TestDerivativeStack:
    def test_velocity_known_value(self):
        np.testing.assert_array_equal(
            dos_velocity(np.array([3.0, 1.0]), np.array([1.0, 2.0])), [2.0, -1.0])

    def test_acceleration_known_value(self):
        np.testing.assert_array_equal(
            dos_acceleration(np.array([4.0]), np.array([1.0]), np.array([0.0])),
            [2.0])

    def test_acceleration_is_velocity_difference_bitwise(self):
        rng = np.random.default_rng(12)
        for _ in range(500):
            s, sp, sp2 = (rng.standard_normal(6) for _ in range(3))
            a = dos_acceleration(s, sp, sp2)
            np.testing.assert_array_equal(
                a, dos_velocity(s, sp) - dos_velocity(sp, sp2))

    def test_acceleration_matches_direct_form_to_rounding(self):
        # the two association orders of this linear combination round
        # differently; equality holds only to the last couple of bits
        rng = np.random.default_rng(13)
        for _ in range(500):
            s, sp, sp2 = (rng.standard_normal(6) for _ in range(3))
            a = dos_acceleration(s, sp, sp2)
            np.testing.assert_allclose(a, s - 2.0 * sp + sp2,
                                       rtol=1e-12, atol=1e-15)


class TestStep:
    def test_trace_records_consistent_values(self):
        p = small_params(2, seed=5)
        state = CellState.initial(4, 3)
        rng = np.random.default_rng(14)
        v_prev_expected = np.zeros(4)
        for t in range(6):
            x = rng.standard_normal(5)
            state, tr = step(state, x, p)
            np.testing.assert_array_equal(tr.v, tr.s - tr.s_prev)
            np.testing.assert_array_equal(tr.a, tr.v - v_prev_expected)
            np.testing.assert_array_equal(tr.z, tr.o_gate * tr.out_tanh)
            np.testing.assert_array_equal(
                tr.s, tr.f_gate * tr.s_prev + tr.i_gate * tr.s_half)
            assert len(tr.dos_prev(2)) == len(tr.dos_curr(2)) == 3
            v_prev_expected = tr.v

    def test_state_history_shifts(self):
        p = small_params(1, seed=6)
        state = CellState.initial(4, 3)
        rng = np.random.default_rng(15)
        prev_s, prev_s2 = np.zeros(4), np.zeros(4)
        for t in range(5):
            state, tr = step(state, rng.standard_normal(5), p)
            np.testing.assert_array_equal(state.s_prev, prev_s)
            np.testing.assert_array_equal(state.s_prev2, prev_s2)
            np.testing.assert_array_equal(state.z_prev, tr.z)
            assert state.t == t + 1
            prev_s2, prev_s = prev_s, state.s_curr

    def test_first_step_derivatives_equal_first_state(self):
        p = small_params(2, seed=7)
        state, tr = step(CellState.initial(4, 3), np.ones(5), p)
        np.testing.assert_array_equal(tr.v, tr.s)
        np.testing.assert_array_equal(tr.a, tr.s)


class TestForwardSequence:
    def test_output_count_and_bounds(self):
        p = small_params(1, seed=8)
        rng = np.random.default_rng(16)
        xs = [rng.standard_normal(5) for _ in range(9)]
        outputs, traces = forward_sequence(xs, p)
        assert len(outputs) == len(traces) == 9
        for z in outputs:
            assert z.shape == (3,)
            assert np.all(np.abs(z) < 1)  # sigmoid * tanh product

    def test_deterministic(self):
        p = small_params(2, seed=9)
        rng = np.random.default_rng(17)
        xs = [rng.standard_normal(5) for _ in range(7)]
        out1, _ = forward_sequence(xs, p)
        out2, _ = forward_sequence(xs, p)
        for a, b in zip(out1, out2):
            np.testing.assert_array_equal(a, b)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            forward_sequence([], small_params(0))

    def test_wrong_frame_width_names_position(self):
        p = small_params(1)
        xs = [np.zeros(5), np.zeros(4)]
        with pytest.raises(ValueError, match="1"):
            forward_sequence(xs, p)

    def test_order_zero_matches_reference_lstm(self):
        rng = np.random.default_rng(18)
        for trial in range(10):
            p = small_params(0, seed=trial, scale=0.5)
            xs = [rng.standard_normal(5) for _ in range(8)]
            ours, _ = forward_sequence(xs, p)
            ref = reference_lstm(xs, p)
            for a, b in zip(ours, ref):
                assert np.max(np.abs(a - b)) < 1e-15


class TestModelFile:
    def test_round_trip_value_exact(self, tmp_path):
        for order in (0, 1, 2):
            p = CellParams.random(order, 6, 5, 4, seed=order + 40, scale=0.7)
            path = tmp_path / f"model{order}.drnn"
            save_params(p, path)
            q = load_params(path)
            assert (q.order, q.input_dim, q.state_dim, q.output_dim) == \
                (p.order, p.input_dim, p.state_dim, p.output_dim)
            for (na, a), (nb, b) in zip(p.named_arrays(), q.named_arrays()):
                assert na == nb
                np.testing.assert_array_equal(a, b)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.drnn"
        save_params(small_params(1), path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="magic"):
            load_params(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "m.drnn"
        save_params(small_params(1), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(ValueError):
            load_params(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "m.drnn"
        save_params(small_params(0), path)
        path.write_bytes(path.read_bytes() + b"leftover")
        with pytest.raises(ValueError):
            load_params(path)
