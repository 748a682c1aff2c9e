"""Line-oriented ``key = value`` configuration and gains files.

Grammar (one entry per line, ``#`` starts a comment, blank lines ignored)::

    model.name = quadrotor            registry key (required)
    model.<arg> = <number>            model/spec factory argument, e.g. model.T_s
    policy.kind = two_step            zoo policy preset
    policy.lags = 2
    policy.gain_bounds = -1.5 : 1.5
    policy.ff_bounds = -15 : 15
    horizon.N = 7
    horizon.M = 2
    history.Y0 = 0 0 0 ; 0 0 0 ; 0 0 0     rows separated by ';'
    history.U0 = 4.905 4.905 ; 4.905 4.905 | none
    beta = box <lo...> : <hi...> | none
    uncertainty.rho_f|rho_h|w|v = <set>
        <set>  := none | <part> { ; <part> }
        <part> := box <lo...> : <hi...> | ball <center...> : <radius>
    cost = terminal_tracking indices=0,2 targets=0,2
    constraint.<i> = terminal_bound index=2 limit=3.5     (i = 1, 2, ...)
    constraints = none
    inner.<field> / outer.<field> = <value>    solver settings
    reduction.<field> = <value>                exchange-loop settings

Numbers accept ``inf``/``-inf``; list entries are separated by spaces or
commas.  Unknown keys are errors.  Every omitted entry defaults to the zoo
spec of ``model.name``/``policy.kind``.
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInputError
from .model import TRAJECTORY_FUNCTIONS, PolicyForm, PolicyParams, ProblemSpec
from .nlp import SolverSettings
from .reduction import ReductionSettings
from .sets import Ball, BoundedSet, Box, Product, empty_set
from .zoo import get_spec

SPEC_KEYS = {
    "policy.kind", "policy.lags", "policy.gain_bounds", "policy.ff_bounds",
    "horizon.N", "horizon.M", "history.Y0", "history.U0", "beta",
    "uncertainty.rho_f", "uncertainty.rho_h", "uncertainty.w", "uncertainty.v",
    "cost", "constraints",
}
_SOLVER_FIELDS = {f.name: f for f in fields(SolverSettings)}
_REDUCTION_FIELDS = {f.name: f for f in fields(ReductionSettings) if f.name not in ("inner", "outer")}


@dataclass
class Config:
    spec: ProblemSpec
    reduction: ReductionSettings = field(default_factory=ReductionSettings)
    model_name: str = ""
    model_args: dict = field(default_factory=dict)
    policy_kind: str | None = None


def fmt(x: float) -> str:
    # shortest repr that round-trips exactly
    x = float(x)
    if np.isfinite(x) and x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _floats(text: str, key: str) -> list[float]:
    parts = [p for p in re.split(r"[\s,]+", text.strip()) if p]
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from None


def _pair(text: str, key: str) -> tuple[float, float]:
    if ":" not in text:
        raise ConfigError(f"{key}: expected 'lo : hi'")
    lo, hi = text.split(":", 1)
    a, b = _floats(lo, key), _floats(hi, key)
    if len(a) != 1 or len(b) != 1:
        raise ConfigError(f"{key}: expected one number on each side of ':'")
    return a[0], b[0]


def _matrix(text: str, key: str, ncols: int) -> np.ndarray:
    if text.strip() == "none":
        return np.zeros((0, ncols))
    rows = [_floats(r, key) for r in text.split(";")]
    if any(len(r) != ncols for r in rows):
        raise ConfigError(f"{key}: every row needs {ncols} entries")
    return np.array(rows, dtype=float)


def _int(text: str, key: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def parse_set(text: str, key: str = "set") -> BoundedSet:
    text = text.strip()
    if text == "none":
        return empty_set()
    parts = []
    for chunk in text.split(";"):
        words = chunk.strip().split(None, 1)
        if len(words) != 2 or ":" not in words[1]:
            raise ConfigError(f"{key}: cannot parse set part {chunk.strip()!r}")
        kind, body = words
        lhs, rhs = body.split(":", 1)
        a, b = _floats(lhs, key), _floats(rhs, key)
        try:
            if kind == "box":
                parts.append(Box(a, b))
            elif kind == "ball":
                if len(b) != 1:
                    raise ConfigError(f"{key}: ball needs a single radius")
                parts.append(Ball(a, b[0]))
            else:
                raise ConfigError(f"{key}: unknown set kind {kind!r}")
        except InvalidInputError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return parts[0] if len(parts) == 1 else Product(tuple(parts))


def format_set(s: BoundedSet) -> str:
    if isinstance(s, Product):
        if not s.parts:
            return "none"
        return " ; ".join(format_set(p) for p in s.parts)
    if isinstance(s, Box):
        return "box " + " ".join(map(fmt, s.lo)) + " : " + " ".join(map(fmt, s.hi))
    if isinstance(s, Ball):
        return "ball " + " ".join(map(fmt, s.center_)) + " : " + fmt(s.radius)
    raise ConfigError(f"cannot serialize set {s!r}")


def parse_function(text: str, key: str):
    words = text.split()
    if not words:
        raise ConfigError(f"{key}: empty function spec")
    kind = words[0]
    cls = TRAJECTORY_FUNCTIONS.get(kind)
    if cls is None:
        raise ConfigError(f"{key}: unknown function {kind!r}; known: {sorted(TRAJECTORY_FUNCTIONS)}")
    names = {f.name: f for f in fields(cls)}
    kwargs = {}
    for w in words[1:]:
        if "=" not in w:
            raise ConfigError(f"{key}: expected name=value, got {w!r}")
        name, value = w.split("=", 1)
        if name not in names:
            raise ConfigError(f"{key}: {kind} has no argument {name!r}")
        vals = _floats(value, key)
        kwargs[name] = tuple(vals) if "tuple" in str(names[name].type) else vals[0]
    try:
        return cls(**kwargs)
    except (TypeError, InvalidInputError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def format_function(fn) -> str:
    if getattr(fn, "kind", None) not in TRAJECTORY_FUNCTIONS:
        raise ConfigError(f"cannot serialize function {fn!r}")
    out = [fn.kind]
    for f in fields(fn):
        v = getattr(fn, f.name)
        out.append(f"{f.name}=" + (",".join(map(fmt, v)) if isinstance(v, tuple) else fmt(v)))
    return " ".join(out)


def _coerce(f: dataclasses.Field, text: str, key: str):
    default = f.default
    if isinstance(default, bool):
        if text.strip() not in ("true", "false"):
            raise ConfigError(f"{key}: expected true or false")
        return text.strip() == "true"
    if isinstance(default, int):
        return _int(text, key)
    if isinstance(default, str):
        return text.strip()
    vals = _floats(text, key)
    if len(vals) != 1:
        raise ConfigError(f"{key}: expected one number")
    return vals[0]


def read_entries(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def parse_config(text: str) -> Config:
    e = read_entries(text)
    if "model.name" not in e:
        raise ConfigError("model.name is required")
    name = e.pop("model.name")
    model_args = {}
    for key in [k for k in e if k.startswith("model.")]:
        vals = _floats(e.pop(key), key)
        if len(vals) != 1:
            raise ConfigError(f"{key}: expected one number")
        model_args[key[len("model."):]] = vals[0]
    kind = e.pop("policy.kind", None)
    try:
        spec = get_spec(name, kind, **model_args)
    except TypeError as exc:
        raise ConfigError(f"model {name!r}: {exc}") from None
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None

    spec_entries = {k: e.pop(k) for k in list(e) if k in SPEC_KEYS or k.startswith("constraint.")}
    inner, outer, red = {}, {}, {}
    for key in list(e):
        section, _, name_ = key.partition(".")
        table = {"inner": _SOLVER_FIELDS, "outer": _SOLVER_FIELDS, "reduction": _REDUCTION_FIELDS}.get(section)
        if table is None or name_ not in table:
            raise ConfigError(f"unknown key {key!r}")
        target = {"inner": inner, "outer": outer, "reduction": red}[section]
        target[name_] = _coerce(table[name_], e.pop(key), key)
    try:
        spec = apply_overrides(spec, spec_entries)
        base = ReductionSettings()
        reduction = ReductionSettings(
            inner=replace(base.inner, **inner), outer=replace(base.outer, **outer), **red)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    return Config(spec=spec, reduction=reduction, model_name=name, model_args=model_args, policy_kind=kind)


def apply_overrides(spec: ProblemSpec, e: dict[str, str]) -> ProblemSpec:
    m = spec.model
    changes = {}
    pol = spec.policy
    if "policy.lags" in e or "policy.gain_bounds" in e or "policy.ff_bounds" in e:
        pol = PolicyForm(
            lags=_int(e["policy.lags"], "policy.lags") if "policy.lags" in e else pol.lags,
            gain_bounds=_pair(e["policy.gain_bounds"], "policy.gain_bounds") if "policy.gain_bounds" in e
            else pol.gain_bounds,
            ff_bounds=_pair(e["policy.ff_bounds"], "policy.ff_bounds") if "policy.ff_bounds" in e
            else pol.ff_bounds,
        )
        changes["policy"] = pol
    if "horizon.N" in e:
        changes["N"] = _int(e["horizon.N"], "horizon.N")
    if "horizon.M" in e:
        changes["M"] = _int(e["horizon.M"], "horizon.M")
    if "history.Y0" in e:
        changes["Y0"] = _matrix(e["history.Y0"], "history.Y0", m.n_y)
    if "history.U0" in e:
        changes["U0"] = _matrix(e["history.U0"], "history.U0", m.n_u)
    if "beta" in e:
        b = e["beta"].strip()
        if b == "none":
            changes["beta_box"] = None
        else:
            s = parse_set(b, "beta")
            if not isinstance(s, Box):
                raise ConfigError("beta: only a single box is supported")
            changes["beta_box"] = s
    unc = {}
    for part in ("rho_f", "rho_h", "w", "v"):
        key = f"uncertainty.{part}"
        if key in e:
            unc[f"{part}_set"] = parse_set(e[key], key)
    if unc:
        changes["uncertainty"] = replace(spec.uncertainty, **unc)
    if "cost" in e:
        changes["cost"] = parse_function(e["cost"], "cost")
    numbered = sorted((k for k in e if k.startswith("constraint.")),
                      key=lambda k: _int(k.split(".", 1)[1], k))
    if "constraints" in e:
        if e["constraints"].strip() != "none":
            raise ConfigError("constraints: only 'none' is accepted (use constraint.<i> entries)")
        if numbered:
            raise ConfigError("constraints = none conflicts with constraint.<i> entries")
        changes["path_constraints"] = ()
    elif numbered:
        idx = [_int(k.split(".", 1)[1], k) for k in numbered]
        if idx != list(range(1, len(idx) + 1)):
            raise ConfigError("constraint entries must be numbered 1, 2, ... without gaps")
        changes["path_constraints"] = tuple(parse_function(e[k], k) for k in numbered)
    if not changes:
        return spec
    try:
        return spec.replace(**changes)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None


def _rows(a: np.ndarray) -> str:
    if a.shape[0] == 0:
        return "none"
    return " ; ".join(" ".join(map(fmt, r)) for r in a)


def dump_config(spec: ProblemSpec, reduction: ReductionSettings | None = None) -> str:
    """Full explicit config for ``spec``; parses back to an equal spec."""
    m = spec.model
    out = [f"model.name = {m.name}"]
    out += [f"model.{k} = {fmt(v)}" for k, v in sorted(m.args.items())]
    p = spec.policy
    out += [
        f"policy.lags = {p.lags}",
        f"policy.gain_bounds = {fmt(p.gain_bounds[0])} : {fmt(p.gain_bounds[1])}",
        f"policy.ff_bounds = {fmt(p.ff_bounds[0])} : {fmt(p.ff_bounds[1])}",
        f"horizon.N = {spec.N}",
        f"horizon.M = {spec.M}",
        f"history.Y0 = {_rows(spec.Y0)}",
        f"history.U0 = {_rows(spec.U0)}",
        "beta = " + ("none" if spec.beta_box is None else format_set(spec.beta_box)),
    ]
    u = spec.uncertainty
    out += [f"uncertainty.{k} = {format_set(getattr(u, k + '_set'))}" for k in ("rho_f", "rho_h", "w", "v")]
    out.append(f"cost = {format_function(spec.cost)}")
    if spec.path_constraints:
        out += [f"constraint.{i} = {format_function(g)}" for i, g in enumerate(spec.path_constraints, start=1)]
    else:
        out.append("constraints = none")
    if reduction is not None:
        base = ReductionSettings()
        for name in _REDUCTION_FIELDS:
            v = getattr(reduction, name)
            if v != getattr(base, name):
                out.append(f"reduction.{name} = {_fmt_value(v)}")
        for section in ("inner", "outer"):
            s, d = getattr(reduction, section), getattr(base, section)
            for name in _SOLVER_FIELDS:
                if getattr(s, name) != getattr(d, name):
                    out.append(f"{section}.{name} = {_fmt_value(getattr(s, name))}")
    return "\n".join(out) + "\n"


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, str)):
        return str(v)
    return fmt(v)


def load_config(path) -> Config:
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------------------
# gains files

def dump_gains(params: PolicyParams) -> str:
    L, n_u, n_y = params.K.shape
    out = ["# linear output-feedback gains u_k = sum_i K_i y_{k-i+1} + u_bar_k",
           f"lags = {L}", f"n_u = {n_u}", f"n_y = {n_y}", f"N = {params.u_bar.shape[0]}"]
    g = lambda r: " ".join(format(float(v), ".17g") for v in r)  # noqa: E731
    for i in range(L):
        out.append(f"K{i + 1} = " + " ; ".join(g(r) for r in params.K[i]))
    out.append("u_bar = " + " ; ".join(g(r) for r in params.u_bar))
    return "\n".join(out) + "\n"


def parse_gains(text: str) -> PolicyParams:
    e = read_entries(text)
    try:
        L, n_u, n_y, N = (_int(e.pop(k), k) for k in ("lags", "n_u", "n_y", "N"))
    except KeyError as exc:
        raise ConfigError(f"gains file lacks {exc.args[0]!r}") from None
    K = np.zeros((L, n_u, n_y))
    for i in range(L):
        key = f"K{i + 1}"
        if key not in e:
            raise ConfigError(f"gains file lacks {key!r}")
        K[i] = _matrix(e.pop(key), key, n_y).reshape(n_u, n_y) if n_u else K[i]
    if "u_bar" not in e:
        raise ConfigError("gains file lacks 'u_bar'")
    ub = _matrix(e.pop("u_bar"), "u_bar", n_u)
    if ub.shape != (N, n_u):
        raise ConfigError(f"u_bar must have {N} rows")
    if e:
        raise ConfigError(f"unknown keys in gains file: {sorted(e)}")
    return PolicyParams(K, ub)


def write_gains(params: PolicyParams, path) -> Path:
    path = Path(path)
    path.write_text(dump_gains(params))
    return path


def load_gains(path) -> PolicyParams:
    return parse_gains(Path(path).read_text())
