"""Run configuration: a flat key=value text document with strict key checking.

Unknown keys are rejected rather than ignored so a typo cannot silently fall
back to a default. Missing keys take the documented defaults below.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

from .cca import CcaConfig
from .tensor import ShapeError


class ConfigError(ValueError):
    """Invalid configuration value or unknown key (validation failure)."""


class ConfigSyntaxError(ValueError):
    """Malformed configuration text (parse failure)."""


@dataclass
class RunConfig:
    seed: int = 0
    dtype: str = "f32"            # f32 | f64
    init: str = "uniform"         # uniform | zero
    use_bias: bool = True         # False: biases start at zero
    c_in: int = 16
    c_mid: int = 8
    c_out: int = 16
    n_keys: int = 4
    dilations: tuple[int, int, int] = (1, 2, 3)
    stride: int = 2
    heads: int = 4
    blocks: int = 1
    ffn_mult: int = 4
    key_merge: str = "add"        # add | overwrite
    ap_interpolation: str = "all_points"  # all_points | 101point

    def __post_init__(self):
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"dtype must be f32 or f64, got {self.dtype!r}")
        if self.init not in ("uniform", "zero"):
            raise ConfigError(f"init must be uniform or zero, got {self.init!r}")
        if self.ap_interpolation not in ("all_points", "101point"):
            raise ConfigError(f"ap_interpolation must be all_points or 101point, "
                              f"got {self.ap_interpolation!r}")
        try:
            self.to_cca()
        except ShapeError as exc:
            raise ConfigError(str(exc)) from None

    def to_cca(self) -> CcaConfig:
        return CcaConfig(c_in=self.c_in, c_mid=self.c_mid, c_out=self.c_out,
                         n_keys=self.n_keys, dilations=tuple(self.dilations),
                         stride=self.stride, heads=self.heads, blocks=self.blocks,
                         ffn_mult=self.ffn_mult, key_merge=self.key_merge)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


_INT_KEYS = {"seed", "c_in", "c_mid", "c_out", "n_keys", "stride", "heads", "blocks", "ffn_mult"}
_STR_KEYS = {"dtype", "init", "key_merge", "ap_interpolation"}
_BOOL_KEYS = {"use_bias"}
_KNOWN_KEYS = _INT_KEYS | _STR_KEYS | _BOOL_KEYS | {"dilations"}


def parse_config_text(text: str) -> RunConfig:
    """Parse `key = value` lines; '#' starts a comment, blank lines are skipped."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigSyntaxError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if key in _INT_KEYS:
            try:
                values[key] = int(value)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} must be an integer, got {value!r}")
        elif key in _BOOL_KEYS:
            low = value.lower()
            if low not in ("true", "false"):
                raise ConfigError(f"line {lineno}: {key} must be true or false, got {value!r}")
            values[key] = low == "true"
        elif key == "dilations":
            try:
                rates = tuple(int(v.strip()) for v in value.split(","))
            except ValueError:
                raise ConfigError(f"line {lineno}: dilations must be comma-separated integers")
            values[key] = rates
        else:
            values[key] = value
    return RunConfig(**values)


def config_text(config: RunConfig) -> str:
    """Serialize a RunConfig back to the flat text format."""
    lines = []
    for key, value in config.to_dict().items():
        if key == "dilations":
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
