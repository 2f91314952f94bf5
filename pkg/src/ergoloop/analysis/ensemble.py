"""Monte Carlo ensembles and empirical initial-condition dependence tests.

Realization ``r`` of initial condition ``i`` draws from its own stream seeded
by ``(master_seed, i, r)``. Realizations are processed in fixed-size batches
and merged in batch order, so results do not depend on the thread count.
"""

import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..loop import InitialCondition, _Engine, _stack_states, initial_state, seed_sequence

BATCH_SIZE = 250
THREADS_ENV = "ERGOLOOP_THREADS"

NON_ERGODIC_FLAG = "non-ergodic"
ERGODIC_FLAG = "consistent-with-ergodic"
INCONCLUSIVE_FLAG = "inconclusive"


def thread_count(requested=None):
    """Worker count: ``requested`` or the CPU count, capped by ``ERGOLOOP_THREADS``."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


@dataclass
class ICResult:
    label: str
    initial_agents: np.ndarray
    agent_mean: np.ndarray
    agent_se: np.ndarray
    groups: dict
    mean_y: np.ndarray
    mean_xc: np.ndarray
    mean_x1: np.ndarray


@dataclass
class EnsembleStats:
    """Time-averaged agent usage per initial condition, plus mean trajectories.

    The time average of agent ``i`` in one realization is its mean value over
    steps ``burn_in..horizon``; ``agent_mean``/``agent_se`` are the mean and
    standard error of that average across realizations. ``groups`` pools
    agents by their initial value (``"init=1"``, ``"init=0"``): for each
    realization the pooled time average is computed first, then its mean and
    standard error across realizations.
    """

    results: list
    realizations: int
    horizon: int
    burn_in: int = 0
    seed: object = None
    digest: str = None
    group_names: list = field(default_factory=list)

    @property
    def labels(self):
        return [r.label for r in self.results]

    def result(self, label):
        for r in self.results:
            if r.label == label:
                return r
        raise KeyError(f"no initial condition labelled {label!r}")

    def summary(self, label, group):
        """``(mean, se)`` for ``group`` ``"agent=<i>"`` (1-based) or ``"init=<v>"``."""
        res = self.result(label)
        if group.startswith("agent="):
            i = int(group.split("=", 1)[1]) - 1
            return float(res.agent_mean[i]), float(res.agent_se[i])
        if group in res.groups:
            return res.groups[group]
        raise KeyError(f"group {group!r} not present for initial condition {label!r}")

    def to_csv(self, out=None, agents=True):
        """One row per initial condition with ``<group>`` and ``<group>_se`` columns.

        Group columns come first (``nan`` when an initial condition has no
        member in that group), then one pair per agent when ``agents`` is set.
        """
        buf = io.StringIO()
        _header(buf, self.digest, self.seed)
        n_agents = len(self.results[0].agent_mean) if agents and self.results else 0
        names = list(self.group_names) + [f"agent={i + 1}" for i in range(n_agents)]
        cols = ["ic"] + [c for g in names for c in (g, f"{g}_se")] + ["R", "horizon", "burn_in"]
        buf.write(",".join(cols) + "\n")
        for res in self.results:
            vals = []
            for g in self.group_names:
                vals.extend(res.groups.get(g, (np.nan, np.nan)))
            for i in range(n_agents):
                vals.extend((res.agent_mean[i], res.agent_se[i]))
            cells = [res.label, *(_fmt(v) for v in vals)]
            cells += [str(self.realizations), str(self.horizon), str(self.burn_in)]
            buf.write(",".join(cells) + "\n")
        return _finish(buf, out)

    def trajectory_csv(self, label, out=None):
        """Ensemble-mean ``y``, first agent and controller state per step."""
        res = self.result(label)
        buf = io.StringIO()
        _header(buf, self.digest, self.seed)
        xc = [f"xc_{j + 1}" for j in range(res.mean_xc.shape[1])]
        buf.write(",".join(["k", "ybar", "x1bar", *xc]) + "\n")
        for k in range(len(res.mean_y)):
            vals = [res.mean_y[k], res.mean_x1[k], *res.mean_xc[k]]
            buf.write(str(k) + "," + ",".join(_fmt(v) for v in vals) + "\n")
        return _finish(buf, out)


def _header(buf, digest, seed):
    if digest is not None:
        buf.write(f"# config_digest={digest}\n")
    if seed is not None:
        buf.write(f"# seed={seed}\n")


def _finish(buf, out):
    text = buf.getvalue()
    if out is None:
        return text
    with open(out, "w", newline="") as fh:
        fh.write(text)
    return None


def _fmt(v):
    return format(float(v), ".17g")


def _agent_values(x, dims):
    if all(d == 1 for d in dims):
        return x
    starts = np.cumsum([0] + list(dims[:-1]))
    return np.add.reduceat(x, starts, axis=1)


def _run_batch(loop, init, indices, horizon, seed, ic_index, burn_in):
    engine = _Engine(loop)
    dims = loop.dims
    b = len(indices)
    gens = [np.random.default_rng(seed_sequence(seed, ic_index, r)) for r in indices]
    n_draws = loop.n_draws
    acc = np.zeros((b, loop.n_agents))
    sum_y = np.zeros(horizon + 1)
    sum_x1 = np.zeros(horizon + 1)
    sum_xc = np.zeros((horizon + 1, init.controller.size))
    d1 = dims[0]

    def draws(count):
        return np.stack([g.random((count, n_draws)) for g in gens])

    def emit(k, rec, repeat):
        vals = _agent_values(rec["x"], dims)
        weight = max(0, min(k + repeat, horizon + 1) - max(k, burn_in))
        if weight:
            acc[...] += vals * weight
        sl = slice(k, k + repeat)
        sum_y[sl] = rec["y"].sum()
        sum_x1[sl] = rec["x"][:, :d1].sum()
        sum_xc[sl] = rec["xc"].sum(axis=0)

    x, c, f = _stack_states([init] * b)
    engine.run(x, c, f, horizon, draws, emit)
    return acc / (horizon + 1 - burn_in), sum_y, sum_x1, sum_xc


def _mean_se(samples):
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    if n < 2:
        return mean, np.full_like(mean, np.nan)
    return mean, samples.std(axis=0, ddof=1) / np.sqrt(n)


def ensemble(
    loop,
    initial_conditions,
    realizations,
    horizon,
    seed=0,
    burn_in=0,
    threads=None,
    digest=None,
    batch_size=BATCH_SIZE,
):
    """Run ``realizations`` independent trajectories from each initial condition."""
    if realizations < 1:
        raise ValueError("need at least one realization")
    if not 0 <= burn_in <= horizon:
        raise ValueError("burn_in must lie in [0, horizon]")
    ics = [
        ic if isinstance(ic, InitialCondition) else InitialCondition(str(i), agents=ic)
        for i, ic in enumerate(initial_conditions)
    ]
    workers = thread_count(threads)
    results = []
    group_names = set()
    for ic_index, ic in enumerate(ics):
        init = initial_state(loop, ic)
        batches = [
            range(s, min(s + batch_size, realizations))
            for s in range(0, realizations, batch_size)
        ]

        def job(idx, init=init, ic_index=ic_index):
            return _run_batch(loop, init, idx, horizon, seed, ic_index, burn_in)

        if workers > 1 and len(batches) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(job, batches))
        else:
            parts = [job(idx) for idx in batches]

        time_avg = np.concatenate([p[0] for p in parts])
        sum_y = parts[0][1].copy()
        sum_x1 = parts[0][2].copy()
        sum_xc = parts[0][3].copy()
        for p in parts[1:]:
            sum_y += p[1]
            sum_x1 += p[2]
            sum_xc += p[3]
        agent_mean, agent_se = _mean_se(time_avg)

        init_values = _agent_values(init.x[None, :], loop.dims)[0]
        groups = {}
        for value in sorted(set(init_values.tolist())):
            name = f"init={_value_name(value)}"
            group_names.add(name)
            members = init_values == value
            m, s = _mean_se(time_avg[:, members].mean(axis=1))
            groups[name] = (float(m), float(s))
        results.append(
            ICResult(
                ic.label,
                init_values,
                agent_mean,
                agent_se,
                groups,
                sum_y / realizations,
                sum_xc / realizations,
                sum_x1 / realizations,
            )
        )
    return EnsembleStats(
        results,
        realizations,
        horizon,
        burn_in,
        seed,
        digest,
        sorted(group_names, reverse=True),
    )


def _value_name(v):
    return str(int(v)) if float(v).is_integer() else format(v, ".17g")


class ICTest(NamedTuple):
    verdict: str
    difference: float
    combined_se: float


def ic_dependence_test(stats, key_a, key_b, threshold=0.05):
    """Compare two ``(ic_label, group)`` summaries of an ensemble.

    Flags non-ergodic when the means differ by more than ``threshold`` plus
    three combined standard errors, consistent-with-ergodic when they differ
    by less than ``threshold``, and inconclusive otherwise.
    """
    mean_a, se_a = stats.summary(*key_a)
    mean_b, se_b = stats.summary(*key_b)
    diff = abs(mean_a - mean_b)
    se = se_a + se_b
    if diff > threshold + 3 * se:
        verdict = NON_ERGODIC_FLAG
    elif diff < threshold:
        verdict = ERGODIC_FLAG
    else:
        verdict = INCONCLUSIVE_FLAG
    return ICTest(verdict, diff, se)
