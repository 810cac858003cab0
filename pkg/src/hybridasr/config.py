"""Pipeline configuration: ``section.key = value`` files with command-line overrides.

Every tunable default of the toolkit appears as a key. Values are coerced
to the type of the default; tuples are written comma-separated.
"""
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .chain.train import ChainConfig
from .errors import BadConfig
from .features import FeatureConfig
from .gmm.train import GmmConfig
from .synth import SynthConfig

__all__ = [
    "LmConfig",
    "ChainTreeConfig",
    "DecodeConfig",
    "PipelineConfig",
    "parse_config_text",
    "load_config",
    "dump_config",
]

DITHER = 1.0 / 32768.0


@dataclass
class LmConfig:
    order: int = 3
    smoothing: str = "witten_bell"

    def __post_init__(self):
        if self.order < 1:
            raise BadConfig("lm order must be >= 1")
        if self.smoothing not in ("witten_bell", "none"):
            raise BadConfig(f"unknown smoothing {self.smoothing!r}")


@dataclass
class ChainTreeConfig:
    leaves: int = 200
    min_gain: float = 150.0

    def __post_init__(self):
        if self.leaves < 1:
            raise BadConfig("tree leaves must be >= 1")


@dataclass
class DecodeConfig:
    beam: float = 16.0
    max_active: int = 7000
    gmm_acoustic_scale: float = 0.1
    chain_acoustic_scale: float = 1.0
    retry_beams: tuple = (64.0,)  # tried in order after NoPathSurvived

    def __post_init__(self):
        if not self.beam > 0 or self.max_active < 1:
            raise BadConfig("beam must be positive and max_active >= 1")


def _mfcc():
    return FeatureConfig.for_gmm(dither=DITHER)


def _fbank():
    return FeatureConfig.for_chain(dither=DITHER)


@dataclass
class PipelineConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    mfcc: FeatureConfig = field(default_factory=_mfcc)
    fbank: FeatureConfig = field(default_factory=_fbank)
    lm: LmConfig = field(default_factory=LmConfig)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    tree: ChainTreeConfig = field(default_factory=ChainTreeConfig)
    chain: ChainConfig = field(default_factory=ChainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    seed: int = 0

    def section(self, name):
        return dataclasses.asdict(getattr(self, name))


def _coerce(raw, default, key):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x for x in raw.replace(" ", "").split(",") if x]
            kind = type(default[0]) if default else float
            return tuple(kind(x) for x in items)
    except ValueError:
        raise BadConfig(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_config_text(text, where="<config>"):
    """``key = value`` lines (``#`` comments) as an ordered list of pairs."""
    pairs = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadConfig(f"{where}:{n}: expected key = value")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def _apply(cfg, pairs):
    values = {}
    for key, raw in pairs:
        if key == "seed":
            values["seed"] = _coerce(raw, 0, key)
            continue
        sec, _, name = key.partition(".")
        if sec not in {f.name for f in dataclasses.fields(PipelineConfig)} or sec == "seed":
            raise BadConfig(f"unknown config section in {key!r}")
        current = getattr(cfg, sec)
        if name not in {f.name for f in dataclasses.fields(current)}:
            raise BadConfig(f"unknown config key {key!r}")
        values.setdefault(sec, {})[name] = _coerce(raw, getattr(current, name), key)
    out = {}
    for sec, kw in values.items():
        out[sec] = kw if sec == "seed" else dataclasses.replace(getattr(cfg, sec), **kw)
    return dataclasses.replace(cfg, **out)


def load_config(path=None, overrides=(), seed=None):
    """Defaults, then the file at ``path``, then ``key=value`` overrides, then ``seed``.

    The single seed also seeds the synthetic corpus and chain training.
    """
    cfg = PipelineConfig()
    if path is not None:
        cfg = _apply(cfg, parse_config_text(Path(path).read_text(), str(path)))
    pairs = []
    for item in overrides:
        if "=" not in item:
            raise BadConfig(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    cfg = _apply(cfg, pairs)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(seed))
    return dataclasses.replace(
        cfg,
        synth=dataclasses.replace(cfg.synth, seed=cfg.seed),
        chain=dataclasses.replace(cfg.chain, seed=cfg.seed),
    )


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg):
    """Every key with its value, in the format :func:`load_config` reads."""
    lines = [f"seed = {cfg.seed}"]
    for f in dataclasses.fields(cfg):
        if f.name == "seed":
            continue
        sec = getattr(cfg, f.name)
        for g in dataclasses.fields(sec):
            lines.append(f"{f.name}.{g.name} = {_fmt(getattr(sec, g.name))}")
    return "\n".join(lines) + "\n"
