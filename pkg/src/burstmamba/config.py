"""Run configuration: an INI document with one section per component.

Grammar::

    [model]
    d_model = 64          ; int / float / bool (true|false|on|off|1|0) / str
    [train]
    betas = 0.9, 0.999    ; tuples are comma-separated

Sections are ``ingest``, ``synth``, ``model``, ``train`` and ``bench``.
Every key is addressable on the command line as ``--section.key=value``.
Unknown sections or keys are rejected with the dotted key in the message.
"""

import configparser
import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig


@dataclass
class IngestOptions:
    n_packets: int = 5
    bytes_per_packet: int = 320
    min_packets: int = 1
    dhcp_filter: bool = True
    split_ratios: tuple = (0.8, 0.1, 0.1)
    split_seed: int = 0
    label_map: str = ""
    manifest: str = ""


@dataclass
class SynthOptions:
    num_classes: int = 4
    flows_per_class: int = 50
    packets_per_flow: int = 5
    seed: int = 11
    motif_len: int = 16
    offset_jitter: int = 0
    protocol: str = "tcp"
    noise_frames: int = 0


@dataclass
class BenchOptions:
    batches: tuple = (8, 16, 32, 64, 128, 256)
    runs: int = 10
    warmup: int = 10
    configs: tuple = ("std_pos", "std_pos_mamba1")
    memory: bool = True


SECTIONS = {
    "ingest": IngestOptions,
    "synth": SynthOptions,
    "model": ModelConfig,
    "train": TrainConfig,
    "bench": BenchOptions,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key, text, default):
    text = str(text).strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(t) for t in items)
        return text
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {type(default).__name__}") from None


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: {} for s in SECTIONS})

    def set(self, dotted, text):
        if "." not in dotted:
            raise ConfigError(dotted, "expected section.key")
        section, key = dotted.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(dotted, f"unknown section {section!r}")
        defaults = {f.name: f.default if f.default is not dataclasses.MISSING else f.default_factory()
                    for f in dataclasses.fields(SECTIONS[section])}
        if key not in defaults:
            raise ConfigError(dotted, "unknown key")
        self.values[section][key] = _coerce(dotted, text, defaults[key])

    def is_set(self, dotted):
        section, key = dotted.split(".", 1)
        return key in self.values[section]

    def build(self, section, **extra):
        """Instantiate a section's dataclass; validation errors keep their dotted key."""
        kw = dict(self.values[section])
        kw.update(extra)
        try:
            return SECTIONS[section](**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(section, str(exc)) from None

    def effective(self):
        """Every key with defaults merged in, as nested dicts."""
        out = {}
        for section, cls in SECTIONS.items():
            out[section] = dataclasses.asdict(self.build(section))
        return out

    def to_ini(self):
        lines = ["; effective configuration (defaults merged)"]
        for section, kv in self.effective().items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {_fmt(v)}" for k, v in kv.items()]
            lines.append("")
        return "\n".join(lines)

    def validate(self):
        for section in SECTIONS:
            self.build(section)


def load_config(path=None, overrides=()):
    """Read an INI file (optional) and apply ``(dotted_key, text)`` overrides."""
    rc = RunConfig()
    if path:
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        with open(path) as fh:
            cp.read_file(fh)
        for section in cp.sections():
            for key, text in cp.items(section):
                rc.set(f"{section}.{key}", text)
    for dotted, text in overrides:
        rc.set(dotted, text)
    rc.validate()
    return rc
