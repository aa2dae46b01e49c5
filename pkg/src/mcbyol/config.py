"""Run configuration: flat sectioned key-value text files.

Format: `[section]` headers, `key = value` lines, `#` comments.  Unknown
sections or keys are errors so hyperparameter typos fail fast.  Values
round-trip exactly through serialize/parse, and the digest of the
canonical serialization identifies every output a run produces.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class DataSection:
    classes: int = 4
    per_class_pretrain: int = 500
    per_class_train: int = 250
    per_class_test: int = 500
    input_dim: int = 10
    separation: float = 4.0
    seed: int = 1234
    ood_mode: str = "shifted_means"
    noise_std: float = 0.1
    mask_prob: float = 0.1
    scale_min: float = 0.8
    scale_max: float = 1.2
    # when set, splits load from <file_prefix>_{pretrain,train,test,ood}
    # instead of the generator above
    file_prefix: str = ""


@dataclass
class ModelSection:
    encoder_hidden: list[int] = field(default_factory=lambda: [64, 64])
    embed_dim: int = 16
    proj_hidden: int = 32
    proj_dim: int = 8
    pred_hidden: int = 32
    activation: str = "tanh"
    tau: float = 0.99


@dataclass
class SamplerSection:
    kind: str = "csghmc"
    lr0: float = 1e-4
    beta: float = 0.9
    temperature: float = 0.1
    cycle_len: int = 50
    total_steps: int = 200
    noise_start_frac: float = 0.8
    prior_std: float = 1.0
    batch: int = 256
    temper_drift: bool = False


@dataclass
class FinetuneSection:
    lr: float = 0.05
    momentum: float = 0.9
    batch: int = 80
    epochs: int = 60
    label_fractions: list[float] = field(default_factory=lambda: [1.0, 0.25, 0.1])
    # desk-scale default is linear evaluation: joint fine-tuning at this
    # scale drowns the representation signal in SGD noise
    freeze_encoder: bool = True


@dataclass
class EvalSection:
    bins: int = 10
    score: str = "entropy"  # or max_prob


@dataclass
class RunSection:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    output_dir: str = ""


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    eval: EvalSection = field(default_factory=EvalSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.run.seeds:
            raise ConfigError("run.seeds must be non-empty")
        if any(s < 0 for s in self.run.seeds):
            raise ConfigError("run.seeds must be non-negative")
        if self.eval.score not in ("entropy", "max_prob"):
            raise ConfigError(f"unknown eval.score {self.eval.score!r}")
        for frac in self.finetune.label_fractions:
            if not 0.0 < frac <= 1.0:
                raise ConfigError("label_fractions must lie in (0, 1]")

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode("utf-8")).hexdigest()[:12]


SECTIONS = {
    "data": DataSection,
    "model": ModelSection,
    "sampler": SamplerSection,
    "finetune": FinetuneSection,
    "eval": EvalSection,
    "run": RunSection,
}


def _parse_scalar(raw: str, target_type, where: str):
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _field_types(section_cls) -> dict[str, type]:
    out = {}
    for f in dataclasses.fields(section_cls):
        if f.type in ("list[int]", "list[float]") or str(f.type).startswith("list"):
            elem = int if "int" in str(f.type) else float
            out[f.name] = ("list", elem)
        else:
            out[f.name] = {"int": int, "float": float, "str": str, "bool": bool}[str(f.type)]
    return out


def parse(text: str) -> RunConfig:
    values: dict[str, dict] = {name: {} for name in SECTIONS}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, sep, raw = stripped.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key = key.strip()
        types = _field_types(SECTIONS[section])
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        expected = types[key]
        where = f"line {lineno} ({section}.{key})"
        if isinstance(expected, tuple):
            elem = expected[1]
            values[section][key] = [_parse_scalar(part, elem, where)
                                    for part in raw.split(",") if part.strip() != ""]
        else:
            values[section][key] = _parse_scalar(raw, expected, where)
    try:
        sections = {name: cls(**values[name]) for name, cls in SECTIONS.items()}
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(**sections)


def load(path) -> RunConfig:
    with open(path) as f:
        return parse(f.read())


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ",".join(_format_value(e) for e in v)
    return str(v)


def serialize(cfg: RunConfig) -> str:
    lines = []
    for name, cls in SECTIONS.items():
        lines.append(f"[{name}]")
        section = getattr(cfg, name)
        for f in dataclasses.fields(cls):
            lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def save(cfg: RunConfig, path) -> None:
    with open(path, "w") as f:
        f.write(serialize(cfg))
