"""Recurrent cell whose gates are driven by discrete state derivatives.

The cell is an LSTM with one extra idea: beside the usual recurrent output
z_{t-1} and the input frame x_t, each gate also receives the internal state
together with its discrete velocity and acceleration. Input and forget gates
read those derivatives at t-1 (before the state update), the output gate
reads them at t (after the update). At order 0 only the state itself feeds
the gates and the cell reduces exactly to a classical LSTM.

One time step, in order:

  1. input and forget gates from the derivative stack at t-1
  2. state update s_t = f * s_{t-1} + i * tanh(pre-state)
  3. velocity and acceleration at t
  4. output gate from the derivative stack at t
  5. cell output z_t = o * tanh(W_zs s_t + b_z)

The acceleration is computed literally as the difference of successive
velocities, which makes the stored trace identities a_t = v_t - v_{t-1}
exact in floating point.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .numeric import Array, affine, as_vector, init_matrix, sigmoid, tanh_act

MAX_ORDER = 2

_MAGIC = b"DRNNPRM1"
_FORMAT_VERSION = 1


# === parameters ===


@dataclass(frozen=True)
class CellParams:
    """All learnable weights of one cell.

    Derivative-driven gate weights come as one matrix per derivative order
    0..order (order 0 multiplies the raw state). Input and forget gates are
    state sized since they modulate the state update; the output gate is
    output sized since it multiplies the squashed readout elementwise.
    Biases start at zero under random initialization so gates open halfway
    at first.
    """

    order: int
    input_dim: int
    state_dim: int
    output_dim: int
    # gate drive from the derivative stack of s_{t-1} (input/forget) and s_t (output)
    W_id: tuple[Array, ...]
    W_fd: tuple[Array, ...]
    W_od: tuple[Array, ...]
    # gate drive from the previous cell output
    W_iz: Array
    W_fz: Array
    W_oz: Array
    # gate drive from the current input frame
    W_ix: Array
    W_fx: Array
    W_ox: Array
    # pre-state and output maps
    W_sz: Array
    W_sx: Array
    W_zs: Array
    b_i: Array
    b_f: Array
    b_o: Array
    b_s: Array
    b_z: Array

    def __post_init__(self):
        if not 0 <= self.order <= MAX_ORDER:
            raise ValueError(f"order must be in 0..{MAX_ORDER}, got {self.order}")
        for name, value in (("input_dim", self.input_dim),
                            ("state_dim", self.state_dim),
                            ("output_dim", self.output_dim)):
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        for fam in ("W_id", "W_fd", "W_od"):
            mats = tuple(np.asarray(m, dtype=np.float64) for m in getattr(self, fam))
            if len(mats) != self.order + 1:
                raise ValueError(
                    f"{fam} must hold {self.order + 1} matrices for order "
                    f"{self.order}, got {len(mats)}"
                )
            object.__setattr__(self, fam, mats)
        for name, arr in self.named_arrays():
            arr = np.asarray(arr, dtype=np.float64)
            expected = self._expected_shape(name)
            if arr.shape != expected:
                raise ValueError(f"{name} must have shape {expected}, got {arr.shape}")

    def _expected_shape(self, name: str) -> tuple[int, ...]:
        n, m, k = self.input_dim, self.state_dim, self.output_dim
        if name.startswith(("W_id", "W_fd")):
            return (m, m)
        if name.startswith("W_od"):
            return (k, m)
        return {
            "W_iz": (m, k), "W_fz": (m, k), "W_oz": (k, k),
            "W_ix": (m, n), "W_fx": (m, n), "W_ox": (k, n),
            "W_sz": (m, k), "W_sx": (m, n), "W_zs": (k, m),
            "b_i": (m,), "b_f": (m,), "b_o": (k,), "b_s": (m,), "b_z": (k,),
        }[name]

    def named_arrays(self):
        """Yield (name, array) pairs in a fixed, stable order."""
        for fam in ("W_id", "W_fd", "W_od"):
            for order_n, mat in enumerate(getattr(self, fam)):
                yield f"{fam}{order_n}", mat
        for name in ("W_iz", "W_fz", "W_oz", "W_ix", "W_fx", "W_ox",
                     "W_sz", "W_sx", "W_zs", "b_i", "b_f", "b_o", "b_s", "b_z"):
            yield name, getattr(self, name)

    def copy(self) -> "CellParams":
        """Deep copy, each array owned by the new object."""
        kwargs = {n: np.array(a, copy=True) for n, a in self.named_arrays()
                  if not n.startswith(("W_id", "W_fd", "W_od"))}
        return CellParams(
            order=self.order, input_dim=self.input_dim,
            state_dim=self.state_dim, output_dim=self.output_dim,
            W_id=tuple(np.array(a, copy=True) for a in self.W_id),
            W_fd=tuple(np.array(a, copy=True) for a in self.W_fd),
            W_od=tuple(np.array(a, copy=True) for a in self.W_od),
            **kwargs,
        )

    @classmethod
    def zeros(cls, order: int, input_dim: int, state_dim: int,
              output_dim: int) -> "CellParams":
        n, m, k = input_dim, state_dim, output_dim
        mk = lambda *shape: np.zeros(shape)
        return cls(
            order=order, input_dim=n, state_dim=m, output_dim=k,
            W_id=tuple(mk(m, m) for _ in range(order + 1)),
            W_fd=tuple(mk(m, m) for _ in range(order + 1)),
            W_od=tuple(mk(k, m) for _ in range(order + 1)),
            W_iz=mk(m, k), W_fz=mk(m, k), W_oz=mk(k, k),
            W_ix=mk(m, n), W_fx=mk(m, n), W_ox=mk(k, n),
            W_sz=mk(m, k), W_sx=mk(m, n), W_zs=mk(k, m),
            b_i=mk(m), b_f=mk(m), b_o=mk(k), b_s=mk(m), b_z=mk(k),
        )

    @classmethod
    def random(cls, order: int, input_dim: int, state_dim: int, output_dim: int,
               seed: int = 0, scale: float = 0.08) -> "CellParams":
        """Seeded uniform initialization of every weight matrix, zero biases.

        Matrices are drawn in the fixed named_arrays order, so the same seed
        always reproduces the same parameters for a given architecture.
        """
        rng = np.random.default_rng(seed)
        n, m, k = input_dim, state_dim, output_dim
        draw = lambda r, c: init_matrix(r, c, scale, rng)
        return cls(
            order=order, input_dim=n, state_dim=m, output_dim=k,
            W_id=tuple(draw(m, m) for _ in range(order + 1)),
            W_fd=tuple(draw(m, m) for _ in range(order + 1)),
            W_od=tuple(draw(k, m) for _ in range(order + 1)),
            W_iz=draw(m, k), W_fz=draw(m, k), W_oz=draw(k, k),
            W_ix=draw(m, n), W_fx=draw(m, n), W_ox=draw(k, n),
            W_sz=draw(m, k), W_sx=draw(m, n), W_zs=draw(k, m),
            b_i=np.zeros(m), b_f=np.zeros(m), b_o=np.zeros(k),
            b_s=np.zeros(m), b_z=np.zeros(k),
        )


# === runtime state and traces ===


@dataclass(frozen=True)
class CellState:
    """Recurrent state between steps: current state plus two of history.

    The two-deep history is enough for acceleration at t-1 because each value
    shifts down one slot per step. Everything starts at zero, which makes the
    first velocity and acceleration equal s_1 exactly.
    """

    s_curr: Array
    s_prev: Array
    s_prev2: Array
    z_prev: Array
    t: int = 0

    @classmethod
    def initial(cls, state_dim: int, output_dim: int) -> "CellState":
        z = np.zeros(state_dim)
        return cls(s_curr=z, s_prev=z.copy(), s_prev2=z.copy(),
                   z_prev=np.zeros(output_dim), t=0)


@dataclass(frozen=True)
class StepTrace:
    """Everything one step computed, kept for the reverse pass.

    Gate entries store pre-activation and activation side by side; v_prev and
    a_prev are the derivative values that actually fed the input and forget
    gates at this step.
    """

    x: Array
    z_prev: Array
    s_prev: Array
    i_pre: Array
    i_gate: Array
    f_pre: Array
    f_gate: Array
    s_half_pre: Array
    s_half: Array
    s: Array
    v: Array
    a: Array
    v_prev: Array
    a_prev: Array
    o_pre: Array
    o_gate: Array
    out_pre: Array
    out_tanh: Array
    z: Array

    def dos_prev(self, order: int) -> list[Array]:
        """Derivative stack of s_{t-1} that fed the input/forget gates."""
        return [self.s_prev, self.v_prev, self.a_prev][: order + 1]

    def dos_curr(self, order: int) -> list[Array]:
        """Derivative stack of s_t that fed the output gate."""
        return [self.s, self.v, self.a][: order + 1]


# === per-step operations ===


def _gate_drive(Wd: tuple[Array, ...], dos: list[Array], Wz: Array, z_prev: Array,
                Wx: Array, x_t: Array, b: Array, order: int, name: str) -> Array:
    if len(dos) != order + 1:
        raise ValueError(
            f"{name}: expected {order + 1} derivative vectors for order {order}, "
            f"got {len(dos)}"
        )
    acc = affine(Wd[0], dos[0], b)
    for mat, vec in zip(Wd[1:], dos[1:]):
        acc = acc + mat @ vec
    acc = acc + Wz @ as_vector(z_prev, "z_prev")
    acc = acc + Wx @ as_vector(x_t, "x_t")
    return acc


def pre_state(z_prev: Array, x_t: Array, params: CellParams) -> Array:
    """Candidate state from the previous output and the current frame."""
    return tanh_act(affine(params.W_sz, z_prev, params.b_s) + params.W_sx @ as_vector(x_t, "x_t"))


def gate_input(dos_prev: list[Array], z_prev: Array, x_t: Array,
               params: CellParams) -> Array:
    """Input gate activation; the derivative stack is taken at t-1."""
    return sigmoid(_gate_drive(params.W_id, dos_prev, params.W_iz, z_prev,
                               params.W_ix, x_t, params.b_i, params.order, "gate_input"))


def gate_forget(dos_prev: list[Array], z_prev: Array, x_t: Array,
                params: CellParams) -> Array:
    """Forget gate activation; the derivative stack is taken at t-1."""
    return sigmoid(_gate_drive(params.W_fd, dos_prev, params.W_fz, z_prev,
                               params.W_fx, x_t, params.b_f, params.order, "gate_forget"))


def gate_output(dos_curr: list[Array], z_prev: Array, x_t: Array,
                params: CellParams) -> Array:
    """Output gate activation; the derivative stack is taken at t, post update."""
    return sigmoid(_gate_drive(params.W_od, dos_curr, params.W_oz, z_prev,
                               params.W_ox, x_t, params.b_o, params.order, "gate_output"))


def update_state(f_t: Array, i_t: Array, s_prev: Array, s_half: Array) -> Array:
    """Gated state update: keep what the forget gate admits, add gated candidate."""
    return f_t * s_prev + i_t * s_half


def dos_velocity(s_t: Array, s_prev: Array) -> Array:
    """First discrete derivative of the state, s_t - s_{t-1}."""
    return np.asarray(s_t, dtype=np.float64) - np.asarray(s_prev, dtype=np.float64)


def dos_acceleration(s_t: Array, s_prev: Array, s_prev2: Array) -> Array:
    """Second discrete derivative, formed as the difference of velocities.

    Algebraically this equals s_t - 2 s_{t-1} + s_{t-2}; evaluating it as
    dos_velocity(s_t, s_prev) - dos_velocity(s_prev, s_prev2) makes the
    identity a_t == v_t - v_{t-1} hold bitwise on stored traces.
    """
    return dos_velocity(s_t, s_prev) - dos_velocity(s_prev, s_prev2)


def cell_output(o_t: Array, s_t: Array, params: CellParams) -> Array:
    """Gated squashed readout of the state."""
    return o_t * tanh_act(affine(params.W_zs, s_t, params.b_z))


def step(state: CellState, x_t: Array, params: CellParams) -> tuple[CellState, StepTrace]:
    """Advance the cell by one frame, returning new state and a full trace."""
    x_t = as_vector(x_t, "x_t")
    if x_t.shape[0] != params.input_dim:
        raise ValueError(
            f"step: frame has length {x_t.shape[0]}, cell expects {params.input_dim}"
        )
    s_prev, s_prev2, s_prev3 = state.s_curr, state.s_prev, state.s_prev2
    z_prev = state.z_prev

    # derivative stack at t-1; these also land in the trace for the reverse pass
    v_prev = dos_velocity(s_prev, s_prev2)
    a_prev = dos_acceleration(s_prev, s_prev2, s_prev3)
    dos_prev = [s_prev, v_prev, a_prev][: params.order + 1]

    i_pre = _gate_drive(params.W_id, dos_prev, params.W_iz, z_prev,
                        params.W_ix, x_t, params.b_i, params.order, "gate_input")
    f_pre = _gate_drive(params.W_fd, dos_prev, params.W_fz, z_prev,
                        params.W_fx, x_t, params.b_f, params.order, "gate_forget")
    i_t = sigmoid(i_pre)
    f_t = sigmoid(f_pre)

    s_half_pre = affine(params.W_sz, z_prev, params.b_s) + params.W_sx @ x_t
    s_half = tanh_act(s_half_pre)
    s_t = update_state(f_t, i_t, s_prev, s_half)

    v_t = dos_velocity(s_t, s_prev)
    a_t = dos_velocity(v_t, v_prev)  # difference of velocities, see dos_acceleration
    dos_curr = [s_t, v_t, a_t][: params.order + 1]

    o_pre = _gate_drive(params.W_od, dos_curr, params.W_oz, z_prev,
                        params.W_ox, x_t, params.b_o, params.order, "gate_output")
    o_t = sigmoid(o_pre)

    out_pre = affine(params.W_zs, s_t, params.b_z)
    out_tanh = tanh_act(out_pre)
    z_t = o_t * out_tanh

    new_state = CellState(s_curr=s_t, s_prev=s_prev, s_prev2=s_prev2,
                          z_prev=z_t, t=state.t + 1)
    trace = StepTrace(
        x=x_t, z_prev=z_prev, s_prev=s_prev,
        i_pre=i_pre, i_gate=i_t, f_pre=f_pre, f_gate=f_t,
        s_half_pre=s_half_pre, s_half=s_half, s=s_t,
        v=v_t, a=a_t, v_prev=v_prev, a_prev=a_prev,
        o_pre=o_pre, o_gate=o_t, out_pre=out_pre, out_tanh=out_tanh, z=z_t,
    )
    return new_state, trace


def forward_sequence(xs, params: CellParams) -> tuple[list[Array], list[StepTrace]]:
    """Run a whole sequence from the zero state, collecting outputs and traces."""
    frames = [as_vector(x, f"frame {t}") for t, x in enumerate(xs)]
    if not frames:
        raise ValueError("forward_sequence: empty sequence")
    for t, fr in enumerate(frames):
        if fr.shape[0] != params.input_dim:
            raise ValueError(
                f"forward_sequence: frame {t} has length {fr.shape[0]}, "
                f"cell expects {params.input_dim}"
            )
    state = CellState.initial(params.state_dim, params.output_dim)
    outputs: list[Array] = []
    traces: list[StepTrace] = []
    for fr in frames:
        state, trace = step(state, fr, params)
        outputs.append(trace.z)
        traces.append(trace)
    return outputs, traces


# === serialization ===
# Flat binary container: magic, version, architecture header, then named
# matrices as (name, rows, cols, row-major float64 little-endian payload).
# Bias vectors travel as single-column matrices. Round trips are bit exact.


def save_params(params: CellParams, path) -> None:
    """Write the parameter container; callers wanting atomicity write to a
    temporary name and rename."""
    arrays = list(params.named_arrays())
    chunks = [_MAGIC, struct.pack("<6I", _FORMAT_VERSION, params.order,
                                  params.input_dim, params.state_dim,
                                  params.output_dim, len(arrays))]
    for name, arr in arrays:
        mat = np.ascontiguousarray(arr if arr.ndim == 2 else arr.reshape(-1, 1),
                                   dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<II", mat.shape[0], mat.shape[1]))
        chunks.append(mat.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_params(path) -> CellParams:
    """Read a parameter container back, validating structure and shapes."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(offset: int, count: int) -> tuple[bytes, int]:
        if offset + count > len(blob):
            raise ValueError("model file: unexpected end of file")
        return blob[offset : offset + count], offset + count

    head, pos = take(0, len(_MAGIC))
    if head != _MAGIC:
        raise ValueError(f"model file: bad magic {head!r}, expected {_MAGIC!r}")
    raw, pos = take(pos, 24)
    version, order, n, m, k, n_arrays = struct.unpack("<6I", raw)
    if version != _FORMAT_VERSION:
        raise ValueError(f"model file: unsupported format version {version}")
    arrays: dict[str, Array] = {}
    for _ in range(n_arrays):
        raw, pos = take(pos, 4)
        (name_len,) = struct.unpack("<I", raw)
        raw, pos = take(pos, name_len)
        name = raw.decode("utf-8")
        raw, pos = take(pos, 8)
        rows, cols = struct.unpack("<II", raw)
        raw, pos = take(pos, rows * cols * 8)
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
    if pos != len(blob):
        raise ValueError("model file: trailing bytes after last array")

    def mat(name: str) -> Array:
        if name not in arrays:
            raise ValueError(f"model file: missing array {name}")
        return arrays.pop(name)

    def vec(name: str) -> Array:
        return mat(name).reshape(-1)

    params = CellParams(
        order=order, input_dim=n, state_dim=m, output_dim=k,
        W_id=tuple(mat(f"W_id{j}") for j in range(order + 1)),
        W_fd=tuple(mat(f"W_fd{j}") for j in range(order + 1)),
        W_od=tuple(mat(f"W_od{j}") for j in range(order + 1)),
        W_iz=mat("W_iz"), W_fz=mat("W_fz"), W_oz=mat("W_oz"),
        W_ix=mat("W_ix"), W_fx=mat("W_fx"), W_ox=mat("W_ox"),
        W_sz=mat("W_sz"), W_sx=mat("W_sx"), W_zs=mat("W_zs"),
        b_i=vec("b_i"), b_f=vec("b_f"), b_o=vec("b_o"),
        b_s=vec("b_s"), b_z=vec("b_z"),
    )
    if arrays:
        raise ValueError(f"model file: unexpected arrays {sorted(arrays)}")
    return params
