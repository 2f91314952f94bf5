"""Closed-loop assembly and simulation.

One step at time ``k`` evaluates, in order: ``y = sum x``, ``yhat = F(y)``,
``e = r - yhat``, ``pi = map(C(e))``, then every agent draws its next state at
``pi`` in ascending index order, one uniform each (after any draw the
controller's switching rule consumes).

The engine is batched over realizations so that single traces and Monte
Carlo ensembles share one code path.
"""

import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from .agents import AffineIFSAgent, BinaryFlipAgent, SigmoidBernoulliAgent
from .control import LinearController, MemorylessGainController, ProbabilityMap
from .errors import (
    BudgetError,
    DimensionError,
    ModelValidationError,
    SignalRangeError,
    UnsupportedStructureError,
)
from .filters import LinearFilter, MovingAverageFilter, identity_filter

DRAW_CHUNK = 256
OFFSET_BUDGET = 10**6


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """Agents, controller, filter and reference wired as a feedback loop.

    Binary-flip agents need a signal in ``[0, 1]``; unless ``validate`` is
    false, construction fails when that cannot be proved from a clamping
    probability map or from the gain of a memoryless controller.
    """

    agents: tuple
    controller: object
    filter: object = None
    reference: object = 0
    prob_map: ProbabilityMap = None
    validate: bool = True

    def __post_init__(self):
        agents = tuple(self.agents)
        if not agents:
            raise ModelValidationError("a closed loop needs at least one agent")
        object.__setattr__(self, "agents", agents)
        if self.filter is None:
            object.__setattr__(self, "filter", identity_filter())
        if self.validate and any(isinstance(a, BinaryFlipAgent) for a in agents):
            if not self._binary_range_safe():
                raise ModelValidationError(
                    "binary agents need pi in [0, 1]; add a clamping probability map"
                )

    @property
    def n_agents(self):
        return len(self.agents)

    @property
    def dims(self):
        return [a.dim for a in self.agents]

    @property
    def state_dim(self):
        return sum(self.dims)

    @property
    def n_draws(self):
        return self.controller.draws_per_step + self.n_agents

    def y_bounds(self):
        lo = hi = 0.0
        for a in self.agents:
            if a.alphabet is not None:
                lo += min(a.alphabet)
                hi += max(a.alphabet)
            else:
                box_lo, box_hi = a.state_box()
                lo += float(np.sum(box_lo))
                hi += float(np.sum(box_hi))
        return lo, hi

    def _binary_range_safe(self):
        bounds = self.prob_map.bounds if self.prob_map is not None else None
        if bounds is not None:
            return 0 <= bounds[0] and bounds[1] <= 1
        if not isinstance(self.controller, MemorylessGainController):
            return False
        if not isinstance(self.filter, MovingAverageFilter):
            return False
        lo, hi = self.y_bounds()
        yh_lo = yh_hi = 0.0
        coeffs = [float(c) for c in self.filter.coefficients]
        yh_lo += min(coeffs[0] * lo, coeffs[0] * hi)
        yh_hi += max(coeffs[0] * lo, coeffs[0] * hi)
        past = [float(v) for v in self.filter.buffer]
        p_lo, p_hi = min([lo] + past), max([hi] + past)
        for c in coeffs[1:]:
            yh_lo += min(c * p_lo, c * p_hi)
            yh_hi += max(c * p_lo, c * p_hi)
        r = float(self.reference)
        worst = max(abs(r - yh_lo), abs(r - yh_hi))
        return float(self.controller.gain) * worst <= 1.0


@dataclass(frozen=True)
class InitialCondition:
    """Named initial state; ``None`` fields fall back to the component defaults."""

    label: str
    agents: tuple = None
    controller: tuple = None
    filter: tuple = None

    @classmethod
    def active_count(cls, n_active, n_agents, label=None):
        values = (1.0,) * n_active + (0.0,) * (n_agents - n_active)
        return cls(str(n_active) if label is None else label, agents=values)


@dataclass
class LoopState:
    """Per-realization state; ``signals`` holds ``(y, yhat, e, pi)`` of the step that produced it."""

    x: np.ndarray
    controller: np.ndarray
    filter: np.ndarray
    k: int = 0
    signals: tuple = None
    branch: np.ndarray = None


def initial_state(loop, ic=None):
    ic = ic or InitialCondition("default")
    d = loop.state_dim
    x = np.zeros(d) if ic.agents is None else np.asarray(ic.agents, dtype=float).reshape(-1)
    if x.shape != (d,):
        raise DimensionError(f"initial agent state needs {d} values, got {x.size}")
    ctrl = loop.controller._batch_init(1)[0]
    if ic.controller is not None:
        ctrl = np.asarray(ic.controller, dtype=float).reshape(-1)
        if ctrl.shape != (loop.controller.n_states,):
            raise DimensionError(f"controller state needs {loop.controller.n_states} values")
    filt = loop.filter._batch_init(1)[0]
    if ic.filter is not None:
        filt = np.asarray(ic.filter, dtype=float).reshape(-1)
        if filt.shape != loop.filter._batch_init(1)[0].shape:
            raise DimensionError("filter state has the wrong size")
    _check_agent_values(loop, x)
    return LoopState(x, ctrl, filt)


def _check_agent_values(loop, x):
    offset = 0
    for i, a in enumerate(loop.agents):
        if isinstance(a, (BinaryFlipAgent, SigmoidBernoulliAgent)) and x[offset] not in (0, 1):
            raise ModelValidationError(f"agent {i + 1} must start in {{0, 1}}, got {x[offset]}")
        offset += a.dim


class _Engine:
    def __init__(self, loop):
        self.loop = loop
        groups = {}
        offset = 0
        for i, a in enumerate(loop.agents):
            cols = list(range(offset, offset + a.dim))
            offset += a.dim
            for key in groups:
                if key == a and key.dim == a.dim:
                    groups[key][0].append(i)
                    groups[key][1].append(cols)
                    break
            else:
                groups[a] = ([i], [cols])
        self.groups = [(m, np.array(ids), np.array(cols)) for m, (ids, cols) in groups.items()]
        self.binary_groups = [g for g in self.groups if isinstance(g[0], BinaryFlipAgent)]
        # fixed points can only be detected for time-invariant, draw-free controllers
        self.can_freeze = len(self.binary_groups) == len(self.groups) and isinstance(
            loop.controller, (MemorylessGainController, LinearController)
        )
        self.ctrl_draws = loop.controller.draws_per_step
        self.reference = float(loop.reference)

    def signals(self, x, c, f, u_ctrl, k):
        loop = self.loop
        y = x.sum(axis=1)
        yhat, f_next = loop.filter._batch_step(y, f)
        e = self.reference - yhat
        raw, c_next = loop.controller._batch_step(c, e, u_ctrl, k)
        pi = raw if loop.prob_map is None else loop.prob_map._batch(raw)
        return y, yhat, e, pi, c_next, f_next

    def advance(self, x, pi, u, k):
        for model, _, _ in self.binary_groups:
            if not model.signal_in_range(pi):
                bad = pi[(pi < 0) | (pi > 1) | np.isnan(pi)][0]
                raise SignalRangeError(float(bad), k)
        x_next = x.copy()
        branch = np.empty((x.shape[0], self.loop.n_agents), dtype=np.intp)
        for model, ids, cols in self.groups:
            new, j = model._batch_step(x[:, cols], pi, u[:, ids])
            x_next[:, cols] = new
            branch[:, ids] = j
        return x_next, branch

    def run(self, x, c, f, horizon, draws, emit):
        """Advance a batch for ``horizon`` steps, calling ``emit(k, record, repeat)``.

        ``draws(count)`` returns the next ``(R, count, n_draws)`` uniforms.
        Once every realization sits at a fixed point of a binary-flip loop
        (``pi == 0`` and unchanged controller/filter state) the remaining
        records are emitted in one call with ``repeat > 1``; no further draws
        are consumed since they could not change the trajectory.
        """
        buf = None
        pos = 0
        for k in range(horizon + 1):
            if self.ctrl_draws or k < horizon:
                if buf is None or pos == buf.shape[1]:
                    remaining = horizon + 1 - k if self.ctrl_draws else horizon - k
                    buf = draws(min(DRAW_CHUNK, remaining))
                    pos = 0
                u = buf[:, pos, :]
                pos += 1
            else:
                u = np.zeros((x.shape[0], self.loop.n_draws))
            u_ctrl = u[:, 0] if self.ctrl_draws else None
            y, yhat, e, pi, c_next, f_next = self.signals(x, c, f, u_ctrl, k)
            record = {"x": x, "y": y, "yhat": yhat, "e": e, "pi": pi, "xc": c, "xf": f}
            if (
                self.can_freeze
                and k < horizon
                and not np.any(pi)
                and np.array_equal(c, c_next)
                and np.array_equal(f, f_next)
            ):
                record["branch"] = x.astype(np.intp)
                emit(k, record, horizon + 1 - k)
                return
            if k < horizon:
                u_agents = u[:, self.ctrl_draws :]
                x_next, branch = self.advance(x, pi, u_agents, k)
                record["branch"] = branch
            emit(k, record, 1)
            if k < horizon:
                x, c, f = x_next, c_next, f_next


def _stack_states(states):
    x = np.stack([s.x for s in states])
    c = np.stack([s.controller for s in states])
    f = np.stack([s.filter for s in states])
    return x, c, f


def step(loop, state, rng):
    """Advance one realization by one step using ``rng`` for the uniforms."""
    engine = _Engine(loop)
    x, c, f = _stack_states([state])
    u = rng.random(loop.n_draws)[None, :]
    u_ctrl = u[:, 0] if engine.ctrl_draws else None
    y, yhat, e, pi, c_next, f_next = engine.signals(x, c, f, u_ctrl, state.k)
    x_next, branch = engine.advance(x, pi, u[:, engine.ctrl_draws :], state.k)
    return LoopState(
        x_next[0],
        c_next[0],
        f_next[0],
        k=state.k + 1,
        signals=(float(y[0]), float(yhat[0]), float(e[0]), float(pi[0])),
        branch=branch[0],
    )


@dataclass
class Trace:
    """Per-step record of a single realization, ``horizon + 1`` rows."""

    k: np.ndarray
    x: np.ndarray
    y: np.ndarray
    yhat: np.ndarray
    e: np.ndarray
    pi: np.ndarray
    xc: np.ndarray
    xf: np.ndarray
    branches: np.ndarray
    seed: object = None
    digest: str = None
    x_names: list = field(default_factory=list)

    def __len__(self):
        return len(self.k)

    def header(self):
        xc = [f"xc_{j + 1}" for j in range(self.xc.shape[1])]
        return ["k", *self.x_names, "y", "yhat", "e", "pi", *xc]

    def to_csv(self, out=None):
        """Write the trace as CSV (17 significant digits); returns the text if ``out`` is None."""
        buf = io.StringIO()
        if self.digest is not None:
            buf.write(f"# config_digest={self.digest}\n")
        if self.seed is not None:
            buf.write(f"# seed={self.seed}\n")
        buf.write(",".join(self.header()) + "\n")
        for i in range(len(self.k)):
            vals = [*self.x[i], self.y[i], self.yhat[i], self.e[i], self.pi[i], *self.xc[i]]
            buf.write(str(int(self.k[i])) + "," + ",".join(_fmt(v) for v in vals) + "\n")
        text = buf.getvalue()
        if out is None:
            return text
        with open(out, "w", newline="") as fh:
            fh.write(text)
        return None


def _fmt(v):
    return format(float(v), ".17g")


def agent_column_names(loop):
    names = []
    for i, a in enumerate(loop.agents):
        if a.dim == 1:
            names.append(f"x_{i + 1}")
        else:
            names.extend(f"x_{i + 1}_{j + 1}" for j in range(a.dim))
    return names


def seed_sequence(*entropy):
    return np.random.SeedSequence([int(v) for v in entropy])


def simulate(loop, initial=None, horizon=100, seed=0, digest=None):
    """Simulate one realization; a pure function of ``(loop, initial, horizon, seed)``."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if not isinstance(initial, LoopState):
        initial = initial_state(loop, initial)
    rng = np.random.default_rng(seed_sequence(seed))
    engine = _Engine(loop)
    n = horizon + 1
    cols = {
        "x": np.empty((n, loop.state_dim)),
        "y": np.empty(n),
        "yhat": np.empty(n),
        "e": np.empty(n),
        "pi": np.empty(n),
        "xc": np.empty((n, initial.controller.size)),
        "xf": np.empty((n, initial.filter.size)),
    }
    branches = np.empty((horizon, loop.n_agents), dtype=np.intp)

    def emit(k, rec, repeat):
        for name, arr in cols.items():
            arr[k : k + repeat] = rec[name][0]
        if "branch" in rec:
            stop = min(k + repeat, horizon)
            branches[k:stop] = rec["branch"][0]

    def draws(count):
        return rng.random((count, loop.n_draws))[None]

    x, c, f = _stack_states([initial])
    engine.run(x, c, f, horizon, draws, emit)
    return Trace(
        k=np.arange(n),
        branches=branches,
        seed=seed,
        digest=digest,
        x_names=agent_column_names(loop),
        **cols,
    )


# augmented affine form ---------------------------------------------------


def _linear_parts(loop):
    if not isinstance(loop.controller, LinearController):
        raise UnsupportedStructureError("augmented form needs a LinearController")
    if not isinstance(loop.filter, LinearFilter):
        raise UnsupportedStructureError("augmented form needs a state-space LinearFilter")
    agents = []
    for i, a in enumerate(loop.agents):
        ifs = a.as_ifs() if hasattr(a, "as_ifs") else None
        if not isinstance(ifs, AffineIFSAgent):
            raise UnsupportedStructureError(f"agent {i + 1} is not an affine IFS agent")
        agents.append(ifs)
    return agents, loop.filter, loop.controller


def augmented_layout(loop):
    """Slices of the augmented state ``[x, y, ytilde, x_f, yhat, e, x_c, pi]``."""
    agents, filt, ctrl = _linear_parts(loop)
    sizes = [
        ("x", sum(a.dim for a in agents)),
        ("y", 1),
        ("ytilde", filt.memory),
        ("xf", filt.n_states),
        ("yhat", 1),
        ("e", 1),
        ("xc", ctrl.n_states),
        ("pi", 1),
    ]
    layout = {}
    start = 0
    for name, size in sizes:
        layout[name] = slice(start, start + size)
        start += size
    return layout, start


def augmented_matrix(loop):
    """Matrix of the affine map ``xi(k+1) = A xi(k) + b_l`` over the augmented state."""
    agents, filt, ctrl = _linear_parts(loop)
    s, n = augmented_layout(loop)
    big = np.zeros((n, n))
    a_hat = _block_diag([a.a for a in agents])
    j, l = filt.shift
    af, bf, cf, df = filt.a, filt.b, filt.c, filt.d
    ac, bc, cc, dc = ctrl.a, ctrl.b, ctrl.c, ctrl.d

    big[s["x"], s["x"]] = a_hat
    big[s["y"], s["x"]] = a_hat.sum(axis=0)
    big[s["ytilde"], s["y"]] = j
    big[s["ytilde"], s["ytilde"]] = l
    big[s["xf"], s["y"]] = bf
    big[s["xf"], s["ytilde"]] = cf
    big[s["xf"], s["xf"]] = af
    big[s["yhat"], s["y"]] = df @ bf
    big[s["yhat"], s["ytilde"]] = df @ cf
    big[s["yhat"], s["xf"]] = df @ af
    big[s["e"], s["y"]] = -(df @ bf)
    big[s["e"], s["ytilde"]] = -(df @ cf)
    big[s["e"], s["xf"]] = -(df @ af)
    big[s["xc"], s["e"]] = bc
    big[s["xc"], s["xc"]] = ac
    big[s["pi"], s["y"]] = -(dc @ df @ bf)
    big[s["pi"], s["ytilde"]] = -(dc @ df @ cf)
    big[s["pi"], s["xf"]] = -(dc @ df @ af)
    big[s["pi"], s["e"]] = cc @ bc
    big[s["pi"], s["xc"]] = cc @ ac
    return big


def _block_diag(blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        out[i : i + b.shape[0], i : i + b.shape[0]] = b
        i += b.shape[0]
    return out


def offset_vector(loop, branches):
    """Offset ``b_l`` for one joint branch choice (one branch index per agent)."""
    agents, _, ctrl = _linear_parts(loop)
    s, n = augmented_layout(loop)
    b = np.zeros(n)
    xs = np.concatenate([a.offsets[j] for a, j in zip(agents, branches)])
    r = float(loop.reference)
    b[s["x"]] = xs
    b[s["y"]] = xs.sum()
    b[s["e"]] = r
    b[s["pi"]] = ctrl.d[0, 0] * r
    return b


def offset_vectors(loop, budget=OFFSET_BUDGET):
    """All offsets ``b_l`` in lexicographic order of ``(j_1, ..., j_N)``."""
    agents, _, _ = _linear_parts(loop)
    counts = [a.n_branches for a in agents]
    total = int(np.prod(counts, dtype=object))
    if total > budget:
        raise BudgetError(f"{total} joint branches exceeds budget {budget}")
    return [offset_vector(loop, js) for js in itertools.product(*map(range, counts))]


def augmented_state(loop, trace, k):
    """Augmented state at time ``k`` assembled from a trace."""
    _, filt, ctrl = _linear_parts(loop)
    s, n = augmented_layout(loop)
    xi = np.zeros(n)
    nf = filt.n_states
    xi[s["x"]] = trace.x[k]
    xi[s["y"]] = trace.y[k]
    xi[s["ytilde"]] = trace.xf[k, nf:]
    xi[s["xf"]] = trace.xf[k, :nf]
    xi[s["yhat"]] = trace.yhat[k]
    xi[s["e"]] = trace.e[k]
    xi[s["xc"]] = trace.xc[k]
    if loop.prob_map is None or loop.prob_map.kind == "identity":
        xi[s["pi"]] = trace.pi[k]
    else:
        xi[s["pi"]] = ctrl.c[0] @ trace.xc[k] + ctrl.d[0, 0] * trace.e[k]
    return xi
