"""Run configuration: flat ``section.key = value`` text files.

Blank lines and ``#`` comments are ignored. Unknown keys are an error.
"""
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .transforms import EXACT, ROTATION, SCALING, TransformSet

DATASET_KINDS = ("rot12k", "half-rotated", "scaling")


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    text = str(text).strip()
    return tuple(float(v) for v in text.split(",")) if text else ()


@dataclass
class RunConfig:
    data_kind: str = "rot12k"
    data_train_file: str = ""
    data_test_file: str = ""
    data_train_images: str = ""
    data_train_labels: str = ""
    data_test_images: str = ""
    data_test_labels: str = ""
    data_transpose_amat: bool = False
    data_synth_lo: float = float("nan")
    data_synth_hi: float = float("nan")
    data_synth_seed: int = 0
    data_prepared_dir: str = ""
    data_train_subset: int = 0
    data_test_subset: int = 0
    phi_kind: str = ""
    phi_channels: int = 4
    phi_values: tuple = ()
    phi_exact: bool = True
    model_gen_channels: int = 20
    model_dense_width: int = 512
    model_dropout: float = 0.5
    optim_lr: float = 1e-3
    optim_beta1: float = 0.9
    optim_beta2: float = 0.999
    optim_eps: float = 1e-8
    optim_batch_size: int = 64
    schedule_epochs: int = 50
    schedule_eval_every: int = 1
    schedule_checkpoint_every: int = 1
    run_seed: int = 0
    run_out: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.data_kind not in DATASET_KINDS:
            raise ConfigError(f"data.kind must be one of {DATASET_KINDS}, got {self.data_kind!r}")
        if self.phi_kind not in ("", ROTATION, SCALING):
            raise ConfigError(f"phi.kind must be rotation or scaling, got {self.phi_kind!r}")
        if self.phi_channels < 1:
            raise ConfigError("phi.channels must be >= 1")
        if not 0.0 <= self.model_dropout < 1.0:
            raise ConfigError("model.dropout must be in [0, 1)")
        for name in ("model_gen_channels", "model_dense_width", "optim_batch_size", "schedule_epochs",
                     "schedule_eval_every", "schedule_checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{key_of(name)} must be >= 1")
        if self.optim_lr < 0:
            raise ConfigError("optim.lr must be >= 0")
        if self.data_train_subset < 0 or self.data_test_subset < 0:
            raise ConfigError("subset sizes must be >= 0 (0 means all)")

    @property
    def synth_range(self):
        lo, hi = self.data_synth_lo, self.data_synth_hi
        defaults = {"half-rotated": (-90.0, 90.0), "scaling": (0.5, 1.5), "rot12k": (0.0, 360.0)}[self.data_kind]
        return (defaults[0] if lo != lo else lo, defaults[1] if hi != hi else hi)

    @property
    def prepared_dir(self):
        return Path(self.data_prepared_dir or Path(self.run_out) / "data")

    def transform_set(self):
        kind = self.phi_kind or (SCALING if self.data_kind == "scaling" else ROTATION)
        interp = EXACT if self.phi_exact else "bilinear"
        if self.phi_values:
            return TransformSet(kind, self.phi_values, interp if kind == ROTATION else "bilinear")
        n = self.phi_channels
        if kind == SCALING:
            return TransformSet.scalings(n)
        if self.data_kind == "half-rotated":
            return TransformSet.rotations_between(n, -90.0, 90.0, interp)
        return TransformSet.rotations(n, interp)

    def to_text(self):
        return "".join(f"{key_of(f.name)} = {_format(getattr(self, f.name))}\n" for f in fields(self))


def key_of(attr):
    section, _, rest = attr.partition("_")
    return f"{section}.{rest}"


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_FIELDS = {key_of(f.name): f for f in fields(RunConfig)}
_PARSERS = {bool: _bool, int: int, float: float, str: str, tuple: _floats}


def _coerce(key, text):
    f = _FIELDS[key]
    try:
        return _PARSERS[type(f.default) if f.default is not None else str](text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def parse_pairs(pairs, base=None):
    """Build a config from ``(key, text)`` pairs layered over ``base``."""
    values = {} if base is None else {f.name: getattr(base, f.name) for f in fields(RunConfig)}
    for key, text in pairs:
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[_FIELDS[key].name] = _coerce(key, str(text).strip())
    return RunConfig(**values)


def parse_text(text, base=None):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs.append((key, value))
    return parse_pairs(pairs, base)


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text)
