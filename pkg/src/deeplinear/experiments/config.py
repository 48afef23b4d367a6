"""Scan configuration and the flat ``key=value`` config-file format."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from ..initializers import GAUSSIAN, ORTHOGONAL

__all__ = ["ScanConfig", "read_config_file", "parse_int_list", "parse_scheme_list", "parse_eta"]

DEFAULT_DEPTHS = (8, 16, 32, 64, 128)
DEFAULT_WIDTHS = (4, 8, 16, 32, 64, 128, 256)
DEFAULT_CHECKPOINTS = (1258, 10000)


def read_config_file(path):
    """``{key: value}`` strings from a flat config file; ``-`` in keys becomes ``_``.

    Blank lines and lines starting with ``#`` are ignored; a line without ``=``
    is an error.
    """
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def parse_int_list(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    vals = tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    if not vals:
        raise ValueError("empty list")
    return vals


def parse_scheme_list(text):
    if isinstance(text, (list, tuple)):
        items = list(text)
    else:
        items = [v for v in str(text).replace(" ", "").split(",") if v]
    out = []
    for s in items:
        s = s.lower()
        if s not in (ORTHOGONAL, GAUSSIAN):
            raise ValueError(f"unknown scheme {s!r}")
        if s not in out:
            out.append(s)
    if not out:
        raise ValueError("empty scheme list")
    return tuple(out)


def parse_eta(text):
    """``"auto"`` or a positive float."""
    if isinstance(text, str) and text.strip().lower() == "auto":
        return "auto"
    val = float(text)
    if not (val > 0 and math.isfinite(val)):
        raise ValueError(f"eta must be positive, got {text!r}")
    return val


@dataclass(frozen=True)
class ScanConfig:
    """Everything that determines a scan's CSV.

    The dataset is either generated from ``(d_x, d_y, n, data_seed,
    normalize)`` or loaded from ``data_path``. Each cell trains for
    ``max(checkpoints)`` steps (``steps`` is the ceiling and must cover every
    checkpoint). ``trajectory_every > 0`` additionally writes one loss curve
    per cell at that cadence.
    """

    depths: tuple = DEFAULT_DEPTHS
    widths: tuple = DEFAULT_WIDTHS
    schemes: tuple = (ORTHOGONAL, GAUSSIAN)
    trials: int = 3
    steps: int = 10000
    checkpoints: tuple = DEFAULT_CHECKPOINTS
    eta: object = "auto"
    master_seed: int = 0
    d_x: int = 64
    d_y: int = 4
    n: int = 16
    data_seed: int = 0
    data_path: str | None = None
    normalize: bool = False
    trajectory_every: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("depths", tuple(sorted(set(parse_int_list(self.depths)))))
        set_("widths", tuple(sorted(set(parse_int_list(self.widths)))))
        set_("schemes", parse_scheme_list(self.schemes))
        set_("checkpoints", tuple(sorted(set(parse_int_list(self.checkpoints)))))
        set_("eta", parse_eta(self.eta))
        for name in ("trials", "steps", "master_seed", "d_x", "d_y", "n", "data_seed", "trajectory_every"):
            set_(name, int(getattr(self, name)))
        if isinstance(self.normalize, str):
            set_("normalize", self.normalize.strip().lower() in ("1", "true", "yes", "on"))
        if not self.depths or not self.widths:
            raise ValueError("depths and widths must be nonempty")
        if min(self.depths) < 1 or min(self.widths) < 1:
            raise ValueError("depths and widths must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.checkpoints[0] < 0 or self.checkpoints[-1] > self.steps:
            raise ValueError(f"checkpoints {self.checkpoints} must lie in [0, steps={self.steps}]")
        if self.data_path is None and min(self.d_x, self.d_y, self.n) < 1:
            raise ValueError("d_x, d_y and n must be >= 1")
        if self.trajectory_every < 0:
            raise ValueError("trajectory_every must be >= 0")

    @property
    def train_steps(self):
        return self.checkpoints[-1]

    def to_meta(self):
        """Flat ``key: str`` echo, suitable for :func:`~deeplinear.data.write_meta`."""
        out = {}
        for f in fields(self):
            if f.name == "extra":
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = int(v)
            elif v is None:
                v = ""
            out[f.name] = v
        return out

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string values (config file or CLI); unknown keys raise ``KeyError``."""
        known = {f.name for f in fields(cls)} - {"extra"}
        alias = {"seed": "master_seed", "dx": "d_x", "dy": "d_y", "data": "data_path"}
        kwargs = {}
        for k, v in mapping.items():
            k = alias.get(k, k)
            if k not in known:
                raise KeyError(k)
            kwargs[k] = v
        if kwargs.get("data_path") == "":
            kwargs["data_path"] = None
        return cls(**kwargs)
