"""INI-style run configuration.

One file per run, ``key = value`` entries grouped in sections::

    [run]
    seed = 0

    [vehicle]
    horizon = 40

    [noise]
    preset = static_low_gaussian

    [optimizer]
    method = mmd
    N = 4

Noise presets are the files shipped in ``riskmmd/presets``; entries given
next to ``preset`` override the preset values.
"""

import configparser
import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .optimizer import RISK_KINDS, OptimizerConfig
from .reduced_set import DistillConfig
from .risk import DiracConfig, Obstacle, Scene
from .scenarios import LANES, corridor, random_static_scene
from .vehicle import FrenetState, NoiseModel, VehicleParams

PRESET_DIR = "presets"
METHODS = ("mmd", "cvar", "det")


class ConfigError(ValueError):
    """Malformed or incomplete configuration; ``key`` names the culprit."""

    def __init__(self, msg, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key:
            where.append(f"key `{key}`")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)


def _parser():
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                   interpolation=None)
    cp.optionxform = str
    return cp


def parse_text(text, source="<string>"):
    cp = _parser()
    try:
        cp.read_string(text, source=source)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"cannot parse {source}", line=line) from exc
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate entry in {source}", key=exc.option, line=exc.lineno) from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section in {source}", key=exc.section, line=exc.lineno) from exc
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source} must start with a [section] header", line=exc.lineno) from exc
    return cp


def load(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_text(text, str(path))


def config_hash(cp):
    """Short digest of the normalized config, stable under reordering."""
    items = []
    for sec in sorted(cp.sections()):
        for key in sorted(cp[sec]):
            items.append(f"{sec}.{key}={cp[sec][key].strip()}")
    return hashlib.sha256("\n".join(items).encode()).hexdigest()[:16]


def preset_names():
    root = resources.files("riskmmd") / PRESET_DIR
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def load_preset(name):
    root = resources.files("riskmmd") / PRESET_DIR
    f = root / f"{name}.ini"
    if not f.is_file():
        raise ConfigError(f"unknown noise preset {name!r}; available: {', '.join(preset_names())}",
                          key="preset")
    return parse_text(f.read_text(), f"preset {name}")


# typed getters


def _get(cp, sec, key, conv, default=None, required=False):
    if not cp.has_option(sec, key):
        if required:
            raise ConfigError(f"missing required entry in [{sec}]", key=key)
        return default
    raw = cp.get(sec, key)
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {raw!r} in [{sec}]: {exc}", key=key) from exc


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _floats(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


def _words(s):
    return tuple(w.strip().lower() for w in s.replace(",", " ").split() if w.strip())


def _ints(s):
    """``2, 4, 8`` or a half-open range ``0:100``."""
    s = s.strip()
    if ":" in s:
        lo, hi = (int(x) for x in s.split(":"))
        if hi <= lo:
            raise ValueError("empty range")
        return tuple(range(lo, hi))
    return tuple(int(x) for x in s.replace(",", " ").split())


def _wrap(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def seed(cp, override=None):
    if override is not None:
        return int(override)
    return _get(cp, "run", "seed", int, 0)


def vehicle_params(cp, extra=None):
    """Vehicle parameters; ``horizon`` is required.

    ``extra`` is an optional second parser (a noise preset) whose
    ``init_std`` applies unless the main config sets one.
    """
    sec = "vehicle"
    horizon = _get(cp, sec, "horizon", int, required=True)
    init_std = _get(cp, sec, "init_std", _floats)
    if init_std is None and extra is not None:
        init_std = _get(extra, sec, "init_std", _floats)
    kw = dict(horizon=horizon)
    for key in ("wheelbase", "dt", "a_min", "a_max", "theta_min", "theta_max"):
        val = _get(cp, sec, key, float)
        if val is not None:
            kw[key] = val
    if init_std is not None:
        if len(init_std) != 5:
            raise ConfigError("init_std needs five entries", key="init_std")
        kw["init_std"] = init_std
    return _wrap(VehicleParams, **kw)


def noise_model(cp, preset=None):
    """Noise model from ``[noise]``, optionally seeded from a named preset."""
    name = preset or _get(cp, "noise", "preset", str)
    base = load_preset(name) if name else None
    vals = {}
    for src in (base, cp):
        if src is None or not src.has_section("noise"):
            continue
        for key in ("family", "c_a1", "c_a2", "c_th1", "c_th2"):
            if src.has_option("noise", key) and not (src is cp and preset):
                vals[key] = src.get("noise", key)
    if not vals:
        return NoiseModel("gaussian")
    try:
        return NoiseModel(vals.get("family", "gaussian"),
                          *(float(vals.get(k, 0.0)) for k in ("c_a1", "c_a2", "c_th1", "c_th2")))
    except ValueError as exc:
        raise ConfigError(str(exc), key="noise") from exc


def distill_config(cp, sec="distill", default=None):
    base = default or DistillConfig()
    kw = {}
    for key, conv in (("cem_samples", int), ("cem_iters", int), ("cem_elite_frac", float),
                      ("lambda_init_std", float), ("qp_ridge", float), ("seed", int)):
        val = _get(cp, sec, key, conv)
        if val is not None:
            kw[key] = val
    rng = _get(cp, sec, "sigma_range", _floats)
    if rng is not None:
        if len(rng) != 2:
            raise ConfigError("sigma_range needs two entries", key="sigma_range")
        kw["sigma_range"] = rng
    if not kw:
        return base
    fields = {f: getattr(base, f) for f in base.__dataclass_fields__}
    fields.update(kw)
    return _wrap(DistillConfig, **fields)


def optimizer_config(cp, method=None, N=None):
    sec = "optimizer"
    kw = {}
    for key, conv in (("n", int), ("n_c", int), ("n_e", int), ("iters", int), ("N", int),
                      ("gamma", float), ("eta", float), ("w1", float), ("w2", float),
                      ("w3", float), ("cvar_alpha", float), ("cov_floor", float),
                      ("v_max", float), ("include_lane", _bool)):
        val = _get(cp, sec, key, conv)
        if val is not None:
            kw[key] = val
    rs = _get(cp, sec, "residual_sigma", str)
    if rs is not None:
        kw["residual_sigma"] = None if rs.strip().lower() == "none" else _get(
            cp, sec, "residual_sigma", float)
    std = _get(cp, sec, "init_std", _floats)
    if std is not None:
        if len(std) != 2:
            raise ConfigError("init_std needs two entries", key="init_std")
        kw["init_std"] = std
    kind = method or _get(cp, sec, "method", str, "mmd")
    kind = kind.strip().lower()
    if kind not in RISK_KINDS:
        raise ConfigError(f"method must be one of {RISK_KINDS}", key="method")
    kw["risk_kind"] = kind
    if N is not None:
        kw["N"] = int(N)
    kw["distill"] = distill_config(cp, "distill", OptimizerConfig().distill)
    eps = _get(cp, "dirac", "epsilon_std", float)
    nd = _get(cp, "dirac", "n_samples", int)
    if eps is not None or nd is not None:
        kw["dirac"] = _wrap(DiracConfig, nd, 1e-5 if eps is None else eps)
    return _wrap(OptimizerConfig, **kw)


def _obstacles(text):
    out = []
    for i, part in enumerate(p for p in text.replace("\n", ";").split(";") if p.strip()):
        vals = _floats(part)
        if len(vals) not in (4, 6):
            raise ConfigError(f"obstacle {i} needs 's d a b [vs vd]', got {part.strip()!r}",
                              key="obstacles")
        out.append(Obstacle(*vals))
    return tuple(out)


def scene(cp, scenario_seed=None):
    """Scene and start state from ``[scene]``.

    ``kind`` is ``explicit`` (obstacles listed inline), ``random_static`` or
    ``corridor``. Returns ``(x0, scene)``.
    """
    sec = "scene"
    kind = _get(cp, sec, "kind", str, "explicit").strip().lower()
    v_d = _get(cp, sec, "v_d", float, 5.0)
    if kind == "random_static":
        s = scenario_seed if scenario_seed is not None else _get(cp, sec, "seed", int, 0)
        return random_static_scene(s, _get(cp, sec, "n_obstacles", int, 3), v_d=v_d)
    if kind == "corridor":
        return _wrap(corridor, _get(cp, sec, "length", float, 200.0),
                     _get(cp, sec, "n_obstacles", int, 8), v_d=v_d)
    if kind != "explicit":
        raise ConfigError(f"unknown scene kind {kind!r}", key="kind")
    lanes = {k: _get(cp, sec, k, float, LANES[k]) for k in LANES}
    obs = _obstacles(_get(cp, sec, "obstacles", str, ""))
    sc = _wrap(Scene, v_d=v_d, obstacles=obs, **lanes)
    x0 = _get(cp, sec, "x0", _floats, (0.0, lanes["d1"], 0.0, 0.0, v_d))
    if len(x0) != 5:
        raise ConfigError("x0 needs five entries", key="x0")
    return _wrap(FrenetState, *x0), sc


@dataclass(frozen=True)
class BenchmarkSpec:
    scenarios: tuple
    N_values: tuple
    methods: tuple
    noise: tuple
    M: int = 1000
    retries: int = 2
    n_obstacles: int = 3
    v_d: float = 5.0

    def __post_init__(self):
        if not (self.scenarios and self.N_values and self.methods and self.noise):
            raise ConfigError("benchmark sweeps must be non-empty")
        if self.M < 100:
            raise ConfigError("ground-truth M must be >= 100", key="M")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}", key="methods")


def benchmark_spec(cp):
    sec = "benchmark"
    if not cp.has_section(sec):
        raise ConfigError("missing [benchmark] section", key=sec)
    return BenchmarkSpec(
        scenarios=_get(cp, sec, "scenarios", _ints, required=True),
        N_values=_get(cp, sec, "n_values", _ints, required=True),
        methods=_get(cp, sec, "methods", _words, METHODS),
        noise=_get(cp, sec, "noise", _words, required=True),
        M=_get(cp, sec, "M", int, 1000),
        retries=_get(cp, sec, "retries", int, 2),
        n_obstacles=_get(cp, "scene", "n_obstacles", int, 3),
        v_d=_get(cp, "scene", "v_d", float, 5.0),
    )


@dataclass(frozen=True)
class MPCSpec:
    episodes: int
    methods: tuple
    noise: tuple
    route_length: float = 200.0
    max_steps: int = 1000
    cov_reset: float = 0.5
    N: int = 2

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1", key="episodes")
        if not (self.methods and self.noise):
            raise ConfigError("mpc sweeps must be non-empty")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}", key="methods")
        if not 0.0 <= self.cov_reset <= 1.0:
            raise ConfigError("cov_reset must lie in [0, 1]", key="cov_reset")


def mpc_spec(cp):
    sec = "mpc"
    if not cp.has_section(sec):
        raise ConfigError("missing [mpc] section", key=sec)
    return MPCSpec(
        episodes=_get(cp, sec, "episodes", int, required=True),
        methods=_get(cp, sec, "methods", _words, METHODS),
        noise=_get(cp, sec, "noise", _words, required=True),
        route_length=_get(cp, sec, "route_length", float, 200.0),
        max_steps=_get(cp, sec, "max_steps", int, 1000),
        cov_reset=_get(cp, sec, "cov_reset", float, 0.5),
        N=_get(cp, sec, "N", int, 2),
    )


def read_rollouts(path):
    """Rollout matrix from a ``.npy`` file or whitespace/comma separated text."""
    path = Path(path)
    try:
        if path.suffix == ".npy":
            O = np.load(path)
        else:
            O = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read rollouts from {path}: {exc}") from exc
    return np.atleast_2d(np.asarray(O, dtype=float))
