"""Run configuration: one flat record shared by the CLI and the fitters.

Config files are flat key = value text (one pair per line, # comments);
command-line flags override file values, and every output embeds the fully
resolved configuration, defaults included, for provenance.
"""

import dataclasses
from dataclasses import dataclass

from .mixture import EmConfig
from .optim import SgdConfig

ALGORITHMS = ("soft", "hard", "committee")


@dataclass(frozen=True)
class RunConfig:
    """All knobs of a fitting or evaluation run.

    G components (10 suits the simulation study; 20 suits the real-data
    scale), K flow layers, p potential bumps per layer, the EM flavor, the
    SGD and EM settings, the committee size and per-member epoch budget, the
    quadrature grid resolution, and the seed (mandatory for runs that fit or
    simulate).
    """

    G: int = 10
    K: int = 20
    p: int = 1
    algorithm: str = "hard"
    learning_rate: float = 1e-2
    batch_size: int = 256
    epochs_per_mstep: int = 30
    momentum: float = 0.9
    backtracking: bool = False
    tol: float = 1e-5
    max_iters: int = 100
    prune: bool = True
    init_beta: float = 0.1
    init_lloyd: int = 3
    seed: int = None
    grid_resolution: int = 20000
    members: int = 50
    member_epochs: int = 150

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if min(self.G, self.K, self.p) < 1:
            raise ValueError("G, K, p must all be >= 1")
        if self.grid_resolution < 1 or self.members < 1:
            raise ValueError("grid_resolution and members must be >= 1")

    def sgd_config(self, seed=None):
        return SgdConfig(learning_rate=self.learning_rate,
                         batch_size=self.batch_size,
                         epochs_per_mstep=self.epochs_per_mstep,
                         seed=self.seed if seed is None else seed,
                         momentum=self.momentum,
                         backtracking=self.backtracking)

    def em_config(self):
        return EmConfig(tol=self.tol, max_iters=self.max_iters,
                        prune=self.prune, init_beta=self.init_beta,
                        init_lloyd=self.init_lloyd)

    def to_dict(self):
        return dataclasses.asdict(self)


def _coerce(name, typ, raw):
    if raw.strip().lower() == "none":
        return None
    if typ is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {name}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ValueError(
            f"config key {name}: expected {typ.__name__}, got {raw!r}") from None


def parse_config_file(path):
    """Read a flat key = value file into a string dict; unknown keys and
    malformed lines are rejected with the line number."""
    names = {f.name for f in dataclasses.fields(RunConfig)}
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(
                    f"{path}: line {lineno}: expected key = value")
            key, _, value = text.partition("=")
            key = key.strip()
            if key not in names:
                raise ValueError(f"{path}: line {lineno}: unknown key {key!r}")
            out[key] = value.strip()
    return out


def build_run_config(file_values=None, **overrides):
    """RunConfig from optional file values plus keyword overrides (overrides
    win); values are coerced to the field types."""
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    typemap = {"int": int, "float": float, "bool": bool, "str": str}
    kwargs = {}
    for key, raw in (file_values or {}).items():
        typ = typemap[types[key]] if isinstance(types[key], str) else types[key]
        kwargs[key] = _coerce(key, typ, raw)
    for key, value in overrides.items():
        if value is not None:
            kwargs[key] = value
    return RunConfig(**kwargs)


def format_config(cfg):
    """The resolved configuration as flat key = value text."""
    lines = [f"{key} = {value}" for key, value in cfg.to_dict().items()]
    return "\n".join(lines) + "\n"
