"""Problem files: TOML documents describing a synthesis problem.

See the README for the schema.  Expression strings may use the declared
state and input names, the entries of ``[system.constants]`` and ``pi``.
Box bounds and initial states accept numbers or constant expressions such as
``"-2*pi"``.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .evolve import ConfigInvalid, GpConfig
from .expr import Expr, fold, to_python
from .fitness import RSWS, RWS, Candidate, EvolvedModes, FixedModes, SynthesisProblem
from .grammar import Grammar, GrammarError, table3_grammar
from .interval import Box
from .parse import ExprSyntaxError, parse_expr
from .reach import SystemModel, lte_bounds
from .verify import DEFAULT_BUDGET, DEFAULT_MIN_WIDTH, DEFAULT_SLACK

SCHEMA_VERSION = 1
SECTIONS = {"version", "name", "system", "domain", "sets", "control", "spec", "verify", "gp",
            "grammar", "candidate", "seed"}


class ConfigError(ValueError):
    """Anything wrong with a problem file; the CLI maps it to exit code 1."""


@dataclass
class VerifySettings:
    delta: float = DEFAULT_SLACK
    c: float = DEFAULT_SLACK
    budget: int = DEFAULT_BUDGET
    min_width: float = DEFAULT_MIN_WIDTH
    lte_tol: float = 1e-3
    lte_budget: int = 400_000


@dataclass
class ProblemFile:
    name: str
    source: str
    problem: SynthesisProblem
    grammar: Grammar
    gp: GpConfig
    verify: VerifySettings
    eps_given: bool
    constants: dict[str, float]
    V_text: str | None = None
    modes_text: list[list[str]] | None = None
    alpha_text: list[str] | None = None
    raw: dict = field(default_factory=dict)

    @property
    def state_names(self) -> list[str]:
        return self.problem.sys.state_names

    def parse_state_expr(self, text: str) -> Expr:
        try:
            return parse_expr(text, self.state_names, param_policy="tunable",
                              constants=self.constants)
        except ExprSyntaxError as e:
            raise ConfigError(f"bad expression {text!r}: {e}") from e

    def candidate(self, V: str | None = None, modes: list[list[str]] | None = None) -> Candidate:
        """Candidate from explicit texts, falling back to the ``[candidate]`` section."""
        V = V if V is not None else self.V_text
        if V is None:
            raise ConfigError("no certificate given (use --V or a [candidate] section)")
        modes = modes if modes is not None else self.modes_text
        if isinstance(self.problem.modes, FixedModes):
            mode_exprs = None
        else:
            if not modes:
                raise ConfigError("problem evolves its modes; pass them with --modes")
            mode_exprs = [[self.parse_state_expr(t) for t in m] for m in modes]
            for m in mode_exprs:
                if len(m) != self.problem.sys.m:
                    raise ConfigError("mode dimension does not match the input dimension")
        return Candidate(self.parse_state_expr(V), modes=mode_exprs)

    def alpha(self, texts: list[str] | None = None) -> list[Expr] | None:
        texts = texts if texts is not None else self.alpha_text
        if texts is None:
            return None
        return [self.parse_state_expr(t) for t in texts]

    def effective(self) -> dict:
        """Full configuration with every default filled in."""
        p = self.problem
        sysm = p.sys
        if isinstance(p.modes, FixedModes):
            modes: Any = [[str(t) for t in m] for m in self.raw.get("control", {}).get("modes", [])]
            control_extra = {}
        else:
            modes = "evolve"
            control_extra = {"saturation": _pairs(Box(p.modes.lo, p.modes.hi)),
                             "max_modes": p.modes.max_modes}
        out = {
            "version": SCHEMA_VERSION,
            "name": self.name,
            "system": {"n": sysm.n, "m": sysm.m, "states": sysm.state_names,
                       "inputs": sysm.input_names,
                       "dynamics": list(self.raw["system"]["dynamics"]),
                       "constants": dict(self.constants)},
            "domain": {"X": _pairs(sysm.X), "U": _pairs(sysm.U)},
            "sets": {"S": _pairs(p.S), "I": _pairs(p.I), "G": _pairs(p.G)},
            "control": {"h": p.h, "gamma": p.gamma, "eps": [float(v) for v in p.eps],
                        "eps_given": self.eps_given, "modes": modes, **control_extra,
                        "alpha": self.alpha_text},
            "spec": {"kind": p.spec, "beta": p.beta},
            "verify": asdict(self.verify),
            "gp": asdict(self.gp),
            "grammar": {"const_range": list(self.raw.get("grammar", {}).get("const_range", [-10.0, 10.0]))},
            "candidate": {"V": self.V_text, "modes": self.modes_text},
            "seed": {"value": self.gp.seed},
        }
        out["system"]["constants"].pop("pi", None)
        return out


def _pairs(b: Box) -> list[list[float]]:
    return [[float(l), float(h)] for l, h in zip(b.lo, b.hi)]


def shipped_problems() -> list[str]:
    root = resources.files("clbfgp") / "benchmarks"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".prob"))


def resolve(path_or_name: str) -> tuple[str, str]:
    """Return ``(source label, text)`` for a file path or a shipped benchmark name."""
    p = Path(path_or_name)
    if p.is_file():
        return str(p), p.read_text()
    name = path_or_name[:-5] if path_or_name.endswith(".prob") else path_or_name
    res = resources.files("clbfgp") / "benchmarks" / f"{name}.prob"
    if res.is_file():
        return f"<shipped:{name}>", res.read_text()
    raise ConfigError(f"no such problem file or shipped benchmark: {path_or_name!r} "
                      f"(shipped: {', '.join(shipped_problems())})")


def load_problem(path_or_name: str, overrides: dict | None = None) -> ProblemFile:
    source, text = resolve(path_or_name)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{source}: {e}") from e
    try:
        return parse_problem(doc, source, overrides)
    except ConfigError as e:
        raise ConfigError(f"{source}: {e}") from e
    except (ValueError, GrammarError, ConfigInvalid) as e:
        raise ConfigError(f"{source}: {e}") from e


def _section(doc: dict, name: str, required: bool = False) -> dict:
    if name not in doc:
        if required:
            raise ConfigError(f"missing [{name}] section")
        return {}
    sec = doc[name]
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _check_keys(sec: dict, name: str, allowed: set[str]) -> None:
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")


def _number(v, constants: dict[str, float], what: str) -> float:
    if isinstance(v, bool):
        raise ConfigError(f"{what}: expected a number")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            e = fold(parse_expr(v, [], constants=constants))
        except ExprSyntaxError as err:
            raise ConfigError(f"{what}: {err}") from err
        val = float(to_python([e], 0)([])[0])
        if not math.isfinite(val):
            raise ConfigError(f"{what}: not finite")
        return val
    raise ConfigError(f"{what}: expected a number or constant expression")


def parse_vector(text: str, constants: dict[str, float] | None = None) -> list[float]:
    """``"a, b, ..."`` with constant-expression entries (used for ``--x0``)."""
    consts = {"pi": math.pi, **(constants or {})}
    out = []
    for part in text.split(","):
        if not part.strip():
            raise ConfigError(f"empty component in {text!r}")
        out.append(_number(part.strip(), consts, "vector entry"))
    return out


def _box(v, dim: int, constants: dict[str, float], what: str) -> Box:
    if not isinstance(v, list) or len(v) != dim:
        raise ConfigError(f"{what}: expected {dim} [lo, hi] pairs")
    lo, hi = [], []
    for k, pair in enumerate(v):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError(f"{what}: entry {k} is not a [lo, hi] pair")
        a, b = (_number(x, constants, what) for x in pair)
        if not a <= b:
            raise ConfigError(f"{what}: dimension {k + 1} has lo > hi ({a} > {b})")
        lo.append(a)
        hi.append(b)
    return Box(lo, hi)


def _strings(v, what: str) -> list[str]:
    if not isinstance(v, list) or not all(isinstance(s, str) for s in v):
        raise ConfigError(f"{what}: expected a list of expression strings")
    return list(v)


def parse_problem(doc: dict, source: str = "<memory>", overrides: dict | None = None) -> ProblemFile:
    unknown = set(doc) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown sections or keys: {sorted(unknown)}")
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported or missing version {version!r} (expected {SCHEMA_VERSION})")
    name = str(doc.get("name", Path(source).stem))

    # -- system
    sy = _section(doc, "system", True)
    _check_keys(sy, "system", {"n", "m", "states", "inputs", "dynamics", "constants"})
    dyn = _strings(sy.get("dynamics"), "system.dynamics")
    n = int(sy.get("n", len(dyn)))
    if n != len(dyn):
        raise ConfigError(f"system.n = {n} but {len(dyn)} dynamics expressions")
    states = list(sy.get("states", [f"x{i + 1}" for i in range(n)]))
    if len(states) != n:
        raise ConfigError("need one state name per state")
    dom = _section(doc, "domain", True)
    _check_keys(dom, "domain", {"X", "U"})
    if "U" not in dom:
        raise ConfigError("[domain] needs U")
    m = int(sy.get("m", len(dom["U"]) if isinstance(dom["U"], list) else 1))
    inputs = list(sy.get("inputs", ["u"] if m == 1 else [f"u{j + 1}" for j in range(m)]))
    if len(inputs) != m:
        raise ConfigError("need one input name per input")
    raw_consts = sy.get("constants", {})
    if not isinstance(raw_consts, dict):
        raise ConfigError("[system.constants] must be a table")
    constants: dict[str, float] = {"pi": math.pi}
    for k, v in raw_consts.items():
        if k in states or k in inputs:
            raise ConfigError(f"constant {k!r} shadows a variable")
        constants[k] = _number(v, constants, f"constant {k}")
    if len(set(states + inputs)) != n + m:
        raise ConfigError("state and input names must be distinct")
    try:
        f = [parse_expr(t, states + inputs, constants=constants) for t in dyn]
    except ExprSyntaxError as e:
        raise ConfigError(f"system.dynamics: {e}") from e

    X = _box(dom.get("X"), n, constants, "domain.X")
    U = _box(dom.get("U"), m, constants, "domain.U")
    model = SystemModel(f, X, U, states, inputs)

    # -- sets
    st = _section(doc, "sets", True)
    _check_keys(st, "sets", {"S", "I", "G"})
    S = _box(st["S"], n, constants, "sets.S") if "S" in st else X
    for key in ("I", "G"):
        if key not in st:
            raise ConfigError(f"[sets] needs {key}")
    I = _box(st["I"], n, constants, "sets.I")
    G = _box(st["G"], n, constants, "sets.G")
    ov = overrides or {}
    if ov.get("G") is not None:
        G = ov["G"]

    # -- control
    co = _section(doc, "control", True)
    _check_keys(co, "control", {"h", "gamma", "eps", "modes", "saturation", "max_modes", "alpha"})
    if "h" not in co:
        raise ConfigError("[control] needs h")
    h = _number(co["h"], constants, "control.h")
    gamma = _number(co.get("gamma", 0.1), constants, "control.gamma")
    eps_given = "eps" in co
    if eps_given:
        if not isinstance(co["eps"], list) or len(co["eps"]) != n:
            raise ConfigError(f"control.eps: expected {n} numbers")
        eps = np.array([_number(v, constants, "control.eps") for v in co["eps"]])
    else:
        eps = None
    modes_raw = co.get("modes")
    if modes_raw == "evolve":
        sat = _box(co.get("saturation", dom["U"]), m, constants, "control.saturation")
        max_modes = int(co.get("max_modes", 3))
        if max_modes < 1:
            raise ConfigError("control.max_modes must be >= 1")
        modes: FixedModes | EvolvedModes = EvolvedModes(tuple(sat.lo), tuple(sat.hi), max_modes)
    elif isinstance(modes_raw, list) and modes_raw:
        rows = []
        for k, mode in enumerate(modes_raw):
            texts = [mode] if isinstance(mode, str) else mode
            texts = _strings(texts, f"control.modes[{k}]")
            if len(texts) != m:
                raise ConfigError(f"control.modes[{k}] has {len(texts)} entries for {m} inputs")
            try:
                rows.append(tuple(parse_expr(t, states, constants=constants) for t in texts))
            except ExprSyntaxError as e:
                raise ConfigError(f"control.modes[{k}]: {e}") from e
        modes = FixedModes(tuple(rows))
    else:
        raise ConfigError('control.modes must be a nonempty list or "evolve"')
    alpha_text = _strings(co["alpha"], "control.alpha") if "alpha" in co else None
    if alpha_text is not None and isinstance(modes, FixedModes) and len(alpha_text) != len(modes):
        raise ConfigError("control.alpha needs one entry per mode")

    # -- spec / verify
    sp = _section(doc, "spec")
    _check_keys(sp, "spec", {"kind", "beta"})
    kind = str(sp.get("kind", RWS))
    if kind not in (RWS, RSWS):
        raise ConfigError(f"spec.kind must be {RWS!r} or {RSWS!r}")
    beta = _number(sp["beta"], constants, "spec.beta") if "beta" in sp else None
    if "beta" in ov:
        beta = ov["beta"]
        if beta is not None:
            kind = RSWS
    if kind == RSWS and beta is None:
        raise ConfigError("reach-and-stay needs spec.beta")
    ve = _section(doc, "verify")
    _check_keys(ve, "verify", {f.name for f in fields(VerifySettings)})
    vs = VerifySettings(**{k: type(getattr(VerifySettings, k))(v) for k, v in ve.items()})
    if ov.get("budget") is not None:
        vs.budget = int(ov["budget"])
    if vs.budget < 1 or vs.min_width <= 0:
        raise ConfigError("verify.budget must be >= 1 and verify.min_width > 0")

    if eps is None:
        eps = lte_bounds(model, vs.lte_tol, vs.lte_budget)
    problem = SynthesisProblem(model, S, I, G, h, eps, modes, gamma=gamma, c=vs.c,
                               delta=vs.delta, spec=kind, beta=beta)

    # -- gp / seed / grammar
    gp_sec = dict(_section(doc, "gp"))
    seed_sec = _section(doc, "seed")
    _check_keys(seed_sec, "seed", {"value"})
    if "value" in seed_sec:
        gp_sec["seed"] = int(seed_sec["value"])
    for k in ("seed", "generations", "time_limit"):
        if ov.get(k) is not None:
            gp_sec[k] = ov[k]
    gp = GpConfig.from_dict(gp_sec)
    gsec = _section(doc, "grammar")
    _check_keys(gsec, "grammar", {"const_range"})
    cr = gsec.get("const_range", [-10.0, 10.0])
    if not isinstance(cr, list) or len(cr) != 2 or not cr[0] < cr[1]:
        raise ConfigError("grammar.const_range must be [lo, hi] with lo < hi")
    grammar = table3_grammar(n, problem.x_c, gp.max_depth, (float(cr[0]), float(cr[1])),
                             problem.max_modes if isinstance(modes, EvolvedModes) else 3, states)

    # -- candidate
    ca = _section(doc, "candidate")
    _check_keys(ca, "candidate", {"V", "modes"})
    V_text = ca.get("V")
    modes_text = None
    if "modes" in ca:
        modes_text = [[t] if isinstance(t, str) else _strings(t, "candidate.modes")
                      for t in ca["modes"]]
    pf = ProblemFile(name, source, problem, grammar, gp, vs, eps_given, constants,
                     V_text, modes_text, alpha_text, doc)
    if V_text is not None:
        pf.candidate()
    pf.alpha()
    return pf


def parse_modes_arg(texts: list[str] | None) -> list[list[str]] | None:
    """``--modes`` values: each is one mode, components separated by ``;``."""
    if texts is None:
        return None
    return [[part.strip() for part in t.split(";")] for t in texts]


def split_list(text: str) -> list[str]:
    """Split a comma separated list of expressions at top-level commas."""
    out, depth, start = [], 0, 0
    for k, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            out.append(text[start:k].strip())
            start = k + 1
    out.append(text[start:].strip())
    if any(not s for s in out):
        raise ConfigError(f"empty entry in {text!r}")
    return out
