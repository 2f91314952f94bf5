"""Experiment configuration files.

Configs are TOML. Numbers may be written as strings like ``"1/2"`` to keep
them exact (they become :class:`fractions.Fraction`). A config has a
``[system]`` table describing the loop, optional ``[variants.<name>]`` tables
that override parts of ``system``, a ``[run]`` table and an ``[analysis]``
table. See the bundled files under ``ergoloop/configs`` for examples.
"""

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import jsonschema
import tomli

from .agents import AffineIFSAgent, BinaryFlipAgent, ConstantLaw, SigmoidBernoulliAgent, SigmoidLaw
from .control import (
    ExternalSequence,
    HalfspaceRule,
    LinearController,
    MemorylessGainController,
    ProbabilityMap,
    RandomizedRule,
    SwitchedController,
    lag_controller,
    pi_controller,
)
from .errors import ConfigError
from .filters import LinearFilter, MovingAverageFilter, embed_moving_average, identity_filter
from .loop import ClosedLoop, InitialCondition

_RATIONAL = re.compile(r"^\s*[+-]?\d+\s*(/\s*\d+\s*)?$")

_NUM = {"anyOf": [{"type": "number"}, {"type": "string", "pattern": _RATIONAL.pattern}]}
_VEC = {"type": "array", "items": _NUM}
_MAT = {"anyOf": [_NUM, _VEC, {"type": "array", "items": _VEC}]}
_LINEAR = {
    "type": "object",
    "required": ["a", "b", "c", "d"],
    "properties": {"a": _MAT, "b": _MAT, "c": _MAT, "d": _MAT, "state": _VEC},
}

_AGENT = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["binary", "sigmoid", "affine"]},
        "count": {"type": "integer", "minimum": 1},
        "base": _NUM,
        "amplitude": _NUM,
        "slope": _NUM,
        "threshold": _NUM,
        "increasing": {"type": "boolean"},
        "a": _MAT,
        "offsets": _MAT,
        "floor": _NUM,
        "law": {"type": "object"},
    },
    "additionalProperties": False,
}

_CONTROLLER = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["gain", "pi", "lag", "linear", "switched"]},
        "gain": _NUM,
        "kappa": _NUM,
        "alpha": _NUM,
        "beta": _NUM,
        "a": _MAT,
        "b": _MAT,
        "c": _MAT,
        "d": _MAT,
        "state": _MAT,
        "modes": {"type": "array", "items": _LINEAR, "minItems": 1},
        "rule": {"type": "object", "required": ["kind"]},
    },
    "additionalProperties": False,
}

_FILTER = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["identity", "moving_average", "fir_state_space", "state_space"]},
        "coefficients": _VEC,
        "a": _MAT,
        "b": _MAT,
        "c": _MAT,
        "d": _MAT,
    },
    "additionalProperties": False,
}

_SYSTEM = {
    "type": "object",
    "properties": {
        "reference": _NUM,
        "agents": {"type": "array", "items": _AGENT, "minItems": 1},
        "controller": _CONTROLLER,
        "filter": _FILTER,
        "map": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["identity", "clamp", "affine_clamp"]},
                "lo": _NUM,
                "hi": _NUM,
                "alpha": _NUM,
                "beta": _NUM,
                "eps": _NUM,
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

_IC = {
    "type": "object",
    "required": ["label"],
    "properties": {
        "label": {"type": "string"},
        "agents": _VEC,
        "active": {"type": "integer", "minimum": 0},
        "controller": _VEC,
        "filter": _VEC,
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["system", "run"],
    "properties": {
        "name": {"type": "string"},
        "system": {**_SYSTEM, "required": ["agents", "controller"]},
        "variants": {"type": "object", "additionalProperties": _SYSTEM},
        "run": {
            "type": "object",
            "properties": {
                "horizon": {"type": "integer", "minimum": 0},
                "realizations": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "burn_in": {"type": "integer", "minimum": 0},
                "initial": {"type": "string"},
                "initial_conditions": {"type": "array", "items": _IC},
                "active_counts": {
                    "type": "object",
                    "required": ["start", "stop"],
                    "properties": {
                        "start": {"type": "integer", "minimum": 0},
                        "stop": {"type": "integer", "minimum": 0},
                        "step": {"type": "integer", "minimum": 1},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "analysis": {
            "type": "object",
            "properties": {
                "certificates": {
                    "type": "array",
                    "items": {"enum": ["finite-chain", "theorem1", "theorem3", "lemma1"]},
                },
                "threshold": {"type": "number", "exclusiveMinimum": 0},
                "k_max": {"type": "integer", "minimum": 1},
                "m_max": {"type": "integer", "minimum": 1},
                "ic_test": {
                    "type": "object",
                    "required": ["a", "b"],
                    "properties": {
                        "a": {"type": "array", "items": {"type": "string"}},
                        "b": {"type": "array", "items": {"type": "string"}},
                    },
                },
                "lemma1": {
                    "type": "object",
                    "required": ["mats", "lyap"],
                    "properties": {"mats": {"type": "array"}, "lyap": {"type": "array"}},
                },
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULT_THRESHOLD = 0.05
DEFAULT_K_MAX = 1024
DEFAULT_M_MAX = 5000


def number(v):
    """Config scalar: ``"p/q"`` strings become Fractions, ints stay exact."""
    if isinstance(v, str):
        if not _RATIONAL.match(v):
            raise ConfigError(f"not a rational number: {v!r}")
        return Fraction(v.replace(" ", ""))
    if isinstance(v, bool):
        raise ConfigError(f"expected a number, got {v!r}")
    return v


def to_floats(v):
    """Nested lists of config scalars as floats."""
    if isinstance(v, (list, tuple)):
        return [to_floats(x) for x in v]
    return float(number(v))


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "controller":
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def config_digest(raw):
    """SHA-256 of the canonical JSON form of a parsed config."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def build_agents(specs):
    agents = []
    for spec in specs:
        kind = spec["kind"]
        count = spec.get("count", 1)
        if kind == "binary":
            agent = BinaryFlipAgent()
        elif kind == "sigmoid":
            agent = _sigmoid(spec)
        else:
            agent = _affine(spec)
        agents.extend([agent] * count)
    return agents


def _sigmoid(spec):
    try:
        return SigmoidBernoulliAgent(
            float(number(spec["base"])),
            float(number(spec["amplitude"])),
            float(number(spec["slope"])),
            float(number(spec["threshold"])),
            spec.get("increasing", True),
        )
    except KeyError as exc:
        raise ConfigError(f"sigmoid agent is missing {exc.args[0]!r}") from None


def _affine(spec):
    law = spec.get("law")
    if law is None:
        raise ConfigError("affine agent needs a [law] table")
    if law.get("kind") == "sigmoid":
        law_obj = SigmoidLaw(_sigmoid(law))
    elif law.get("kind") == "constant":
        law_obj = ConstantLaw(to_floats(law["probs"]))
    else:
        raise ConfigError(f"unknown branch law {law.get('kind')!r}")
    floor = spec.get("floor")
    if floor is None:
        floor = law_obj.agent.floor if isinstance(law_obj, SigmoidLaw) else min(law_obj.probs)
    return AffineIFSAgent(to_floats(spec["a"]), to_floats(spec["offsets"]), law_obj, float(number(floor)))


def build_controller(spec):
    kind = spec["kind"]
    state = spec.get("state")
    try:
        if kind == "gain":
            return MemorylessGainController(number(spec["gain"]))
        if kind == "pi":
            return pi_controller(float(number(spec["kappa"])), float(number(spec["alpha"])), _state(state))
        if kind == "lag":
            return lag_controller(
                float(number(spec["kappa"])),
                float(number(spec["alpha"])),
                float(number(spec["beta"])),
                _state(state),
            )
        if kind == "linear":
            return LinearController(
                *(to_floats(spec[k]) for k in "abcd"),
                state=None if state is None else to_floats(state),
            )
        modes = [LinearController(*(to_floats(m[k]) for k in "abcd")) for m in spec["modes"]]
        return SwitchedController(
            modes, _rule(spec["rule"]), None if state is None else to_floats(state)
        )
    except KeyError as exc:
        raise ConfigError(f"{kind} controller is missing {exc.args[0]!r}") from None


def _state(state):
    if state is None:
        return 0.0
    return to_floats(state)


def _rule(spec):
    kind = spec["kind"]
    if kind == "external":
        return ExternalSequence(tuple(int(v) for v in spec["sequence"]))
    if kind == "halfspace":
        return HalfspaceRule(tuple(to_floats(spec["normal"])), float(number(spec.get("offset", 0))))
    if kind == "randomized":
        return RandomizedRule(float(number(spec["floor"])))
    raise ConfigError(f"unknown switching rule {kind!r}")


def build_filter(spec):
    if spec is None or spec["kind"] == "identity":
        return identity_filter()
    kind = spec["kind"]
    if kind in ("moving_average", "fir_state_space"):
        if "coefficients" not in spec:
            raise ConfigError(f"{kind} filter needs coefficients")
        ma = MovingAverageFilter(tuple(number(c) for c in spec["coefficients"]))
        return ma if kind == "moving_average" else embed_moving_average(ma)
    return LinearFilter(*(to_floats(spec[k]) for k in "abcd"))


def build_map(spec):
    if spec is None:
        return None
    kind = spec["kind"]
    if kind == "identity":
        return ProbabilityMap()
    if kind == "clamp":
        return ProbabilityMap.clamp(number(spec.get("lo", 0)), number(spec.get("hi", 1)))
    return ProbabilityMap.affine_clamp(
        float(number(spec["alpha"])), float(number(spec["beta"])), float(number(spec["eps"]))
    )


@dataclass
class ExperimentConfig:
    """Validated config plus builders for its loops and initial conditions."""

    raw: dict
    path: str = None

    @property
    def name(self):
        if "name" in self.raw:
            return self.raw["name"]
        return Path(self.path).stem if self.path else "experiment"

    @property
    def digest(self):
        return config_digest(self.raw)

    @property
    def run(self):
        return self.raw.get("run", {})

    @property
    def analysis(self):
        return self.raw.get("analysis", {})

    @property
    def horizon(self):
        return self.run.get("horizon", 100)

    @property
    def realizations(self):
        return self.run.get("realizations", 1)

    @property
    def seed(self):
        return self.run.get("seed", 0)

    @property
    def burn_in(self):
        return self.run.get("burn_in", 0)

    @property
    def threshold(self):
        return self.analysis.get("threshold", DEFAULT_THRESHOLD)

    @property
    def variant_names(self):
        """Variant names in file order; ``[None]`` when the config has none."""
        return list(self.raw.get("variants", {})) or [None]

    def system(self, variant=None):
        base = self.raw["system"]
        if variant is None:
            return base
        try:
            return _merge(base, self.raw["variants"][variant])
        except KeyError:
            raise ConfigError(f"unknown variant {variant!r}") from None

    def build_loop(self, variant=None):
        spec = self.system(variant)
        try:
            return ClosedLoop(
                build_agents(spec["agents"]),
                build_controller(spec["controller"]),
                build_filter(spec.get("filter")),
                number(spec.get("reference", 0)),
                build_map(spec.get("map")),
            )
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid system{f' ({variant})' if variant else ''}: {exc}") from exc

    def initial_conditions(self, loop):
        """Configured initial conditions; the default state when none are given."""
        ics = []
        counts = self.run.get("active_counts")
        if counts:
            step = counts.get("step", 1)
            for n in range(counts["start"], counts["stop"] + 1, step):
                if n > loop.n_agents:
                    raise ConfigError(f"active count {n} exceeds {loop.n_agents} agents")
                ics.append(InitialCondition.active_count(n, loop.n_agents))
        for spec in self.run.get("initial_conditions", []):
            agents = spec.get("agents")
            if "active" in spec:
                agents = InitialCondition.active_count(spec["active"], loop.n_agents).agents
            ics.append(
                InitialCondition(
                    spec["label"],
                    agents=None if agents is None else tuple(to_floats(agents)),
                    controller=None if "controller" not in spec else tuple(to_floats(spec["controller"])),
                    filter=None if "filter" not in spec else tuple(to_floats(spec["filter"])),
                )
            )
        return ics or [InitialCondition("default")]

    def simulate_initial(self, loop):
        """Initial condition used by single-trace runs (``run.initial`` label or the first)."""
        ics = self.initial_conditions(loop)
        label = self.run.get("initial")
        if label is None:
            return ics[0]
        for ic in ics:
            if ic.label == label:
                return ic
        raise ConfigError(f"run.initial refers to unknown initial condition {label!r}")


def parse_config(text, path=None):
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path or 'config'}: {where}: {exc.message}") from None
    return ExperimentConfig(raw, str(path) if path else None)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, path)


def bundled_config_path(name):
    """Path of a config shipped with the package (``"ex1"`` or ``"ex1.cfg"``)."""
    fname = name if name.endswith(".cfg") else f"{name}.cfg"
    ref = resources.files("ergoloop") / "configs" / fname
    if not ref.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return Path(str(ref))


def bundled_config(name):
    return load_config(bundled_config_path(name))
