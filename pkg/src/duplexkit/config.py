"""Tool configuration: one JSON file, optionally overridden by ``--set`` flags."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Optional, Tuple

from .builder import BuilderConfig
from .codec import FsqLevels, SpeechTokenSpace, VocabMap
from .manifest import loads
from .metrics import MetricsConfig
from .timeline import DuplexError, TimeGrid, as_seconds


class ConfigError(DuplexError):
    pass


@dataclass(frozen=True)
class AlignerConfig:
    delay_frames: int = 1
    loss_weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if int(self.delay_frames) < 0:
            raise ConfigError("aligner.delay_frames must be >= 0")


@dataclass(frozen=True)
class ToolConfig:
    grid: TimeGrid = field(default_factory=TimeGrid)
    vocab: VocabMap = field(default_factory=VocabMap)
    builder: BuilderConfig = field(default_factory=BuilderConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    aligner: AlignerConfig = field(default_factory=AlignerConfig)


_SECTIONS = ("grid", "vocab", "builder", "metrics", "aligner")


def _section(d: Dict[str, Any], name: str) -> Dict[str, Any]:
    sec = d.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return sec


def _known(sec: Dict[str, Any], name: str, allowed: Iterable[str]):
    bad = set(sec) - set(allowed)
    if bad:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")


def config_from_dict(d: Dict[str, Any]) -> ToolConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    _known(d, "config", _SECTIONS)
    try:
        g = _section(d, "grid")
        _known(g, "grid", ["frames_per_second"])
        grid = TimeGrid(as_seconds(g["frames_per_second"])) if "frames_per_second" in g else TimeGrid()

        v = _section(d, "vocab")
        _known(v, "vocab", ["text_vocab_size", "n_channels", "codebook_size", "fsq_levels", "silence_codes"])
        speech = SpeechTokenSpace(
            n_channels=int(v.get("n_channels", 4)),
            codebook_size=int(v.get("codebook_size", 4037)),
            fsq=FsqLevels(tuple(v["fsq_levels"])) if v.get("fsq_levels") else None,
            silence_codes=tuple(v["silence_codes"]) if v.get("silence_codes") else None,
        )
        vocab = VocabMap(int(v.get("text_vocab_size", 32000)), speech)

        b = _section(d, "builder")
        _known(b, "builder", BuilderConfig.__dataclass_fields__)
        builder = BuilderConfig(**{k: as_seconds(x) for k, x in b.items()})

        m = _section(d, "metrics")
        _known(m, "metrics", MetricsConfig.__dataclass_fields__)
        metrics = MetricsConfig(**{k: None if x is None else as_seconds(x) for k, x in m.items()})

        a = _section(d, "aligner")
        _known(a, "aligner", ["delay_frames", "loss_weights"])
        aligner = AlignerConfig(
            int(a.get("delay_frames", 1)),
            tuple(float(w) for w in a["loss_weights"]) if a.get("loss_weights") else None,
        )
    except ConfigError:
        raise
    except (DuplexError, TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if aligner.loss_weights is not None and len(aligner.loss_weights) != 1 + vocab.speech.n_channels:
        raise ConfigError("aligner.loss_weights needs 1 + n_channels entries")
    return ToolConfig(grid, vocab, builder, metrics, aligner)


def _parse_value(raw: str) -> Any:
    try:
        return loads(raw)
    except ValueError:
        return raw


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> ToolConfig:
    """Read *path* (if given) and apply ``section.key=value`` overrides."""
    d: Dict[str, Any] = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                d = loads(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    for item in overrides:
        key, sep, raw = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in _SECTIONS:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        d.setdefault(section, {})[name] = _parse_value(raw)
    return config_from_dict(d)

