"""Run configuration: an INI file with one section per pipeline stage, plus CLI overrides."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .analysis import DEFAULT_BOUNDARIES
from .corpus_scan import CONTEXT_MAX, CONTEXT_MIN, SEGMENTERS
from .curriculum import CL_PEAK_LR, DEFAULT_STEP_RATIO, WARMUP_PROPORTION
from .masking import Corruption, MaskingConfig, Strategy
from .packing import DEFAULT_MAX_LEN
from .transfer import InitMode
from .wordpiece import MAX_WORD_CHARS, TokenizerOptions


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class Paths:
    corpus: str = ""
    compare_corpus: str = ""
    vocab: str = ""
    base_vocab: str = ""
    base_matrix: str = ""
    matrix: str = ""
    hits: str = ""
    targets: str = ""
    context_responses: str = ""
    freq_table: str = ""


@dataclass
class TokenizerSection:
    vocab_size: int = 30522
    lowercase: bool = True
    strip_accents: bool = True
    split_cjk: bool = True
    max_word_chars: int = MAX_WORD_CHARS


@dataclass
class ScanSection:
    cap: int = CONTEXT_MAX
    min_count: int = CONTEXT_MIN
    segmenter: str = "rule"
    dedup: bool = False


@dataclass
class TransferSection:
    mode: str = "contextualized"
    include_distilled: bool = True
    on_unknown: str = "error"
    provider: str = "exchange"
    dim: int = 768


@dataclass
class MaskingSection:
    masking_strategy: str = "TOKEN"
    masking_rate: float = 0.15
    corruption_strategy: str = "EIGHTY_TEN_TEN"
    max_len: int = DEFAULT_MAX_LEN
    phase: str = ""


@dataclass
class CurriculumSection:
    base_steps: int = 1000
    step_ratio: tuple = DEFAULT_STEP_RATIO
    maximum_learning_rate: float = CL_PEAK_LR
    warmup_proportion: float = WARMUP_PROPORTION


@dataclass
class AnalysisSection:
    boundaries: tuple = DEFAULT_BOUNDARIES
    pairs: int = 10000


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    paths: Paths = field(default_factory=Paths)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    scan: ScanSection = field(default_factory=ScanSection)
    transfer: TransferSection = field(default_factory=TransferSection)
    masking: MaskingSection = field(default_factory=MaskingSection)
    curriculum: CurriculumSection = field(default_factory=CurriculumSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    SECTIONS = ("paths", "tokenizer", "scan", "transfer", "masking", "curriculum", "analysis")

    def tokenizer_options(self) -> TokenizerOptions:
        t = self.tokenizer
        return TokenizerOptions(t.lowercase, t.strip_accents, t.split_cjk, t.max_word_chars)

    def masking_config(self) -> MaskingConfig:
        from .curriculum import phase_config

        if self.masking.phase:
            return phase_config(self.masking.phase)
        m = self.masking
        return MaskingConfig(m.masking_strategy, m.masking_rate, m.corruption_strategy)

    def to_dict(self) -> dict:
        d = asdict(self)
        for section in ("curriculum", "analysis"):
            for k, v in d[section].items():
                if isinstance(v, tuple):
                    d[section][k] = list(v)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def set(self, section: str | None, key: str, raw) -> None:
        target = self if section is None else getattr(self, section)
        types = {f.name: f.type for f in fields(target)}
        if key not in types:
            where = section or "top level"
            raise ConfigError([f"unknown key {key!r} in {where}"])
        setattr(target, key, _coerce(getattr(target, key), raw, f"{section or 'run'}.{key}"))


def _coerce(current, raw, name):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            elem = type(current[0]) if current else float
            return tuple(elem(x) for x in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError([f"{name}: cannot parse {raw!r}"]) from None
    return raw


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read an INI config (``[run]`` plus one section per stage) and apply ``section.key`` overrides."""
    cfg = RunConfig()
    problems = []
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from None
        for section in parser.sections():
            if section != "run" and section not in RunConfig.SECTIONS:
                problems.append(f"unknown section [{section}]")
                continue
            for key, value in parser.items(section):
                try:
                    cfg.set(None if section == "run" else section, key, value)
                except ConfigError as exc:
                    problems.extend(exc.problems)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.rpartition(".")
        try:
            cfg.set(section or None, key, value)
        except ConfigError as exc:
            problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: RunConfig, required_paths=(), must_exist=()) -> None:
    """Collect every problem before failing, so one run reports them all."""
    problems = []
    if cfg.seed < 0:
        problems.append("run.seed must be >= 0")
    if cfg.workers < 1:
        problems.append("run.workers must be >= 1")
    for name in required_paths:
        if not getattr(cfg.paths, name):
            problems.append(f"paths.{name} is required")
    for name in must_exist:
        value = getattr(cfg.paths, name)
        if value and not Path(value).exists():
            problems.append(f"paths.{name} does not exist: {value}")
    s = cfg.scan
    if not 1 <= s.min_count <= s.cap:
        problems.append("scan.min_count must satisfy 1 <= min_count <= cap")
    if s.segmenter not in SEGMENTERS:
        problems.append(f"scan.segmenter must be one of {sorted(SEGMENTERS)}")
    t = cfg.transfer
    if t.mode not in {m.value for m in InitMode}:
        problems.append(f"transfer.mode must be one of {[m.value for m in InitMode]}")
    if t.on_unknown not in ("error", "random"):
        problems.append("transfer.on_unknown must be 'error' or 'random'")
    if t.provider not in ("exchange", "static", "window"):
        problems.append("transfer.provider must be 'exchange', 'static' or 'window'")
    if t.dim < 1:
        problems.append("transfer.dim must be >= 1")
    m = cfg.masking
    if m.masking_strategy not in Strategy.__members__:
        problems.append(f"masking.masking_strategy must be one of {list(Strategy.__members__)}")
    if m.corruption_strategy not in Corruption.__members__:
        problems.append(f"masking.corruption_strategy must be one of {list(Corruption.__members__)}")
    if not 0.0 <= m.masking_rate <= 1.0:
        problems.append("masking.masking_rate must be in [0, 1]")
    if m.max_len < 2:
        problems.append("masking.max_len must be >= 2")
    if m.phase and m.phase not in ("0.1", "0.2", "0.3", "0.4"):
        problems.append("masking.phase must be one of 0.1, 0.2, 0.3, 0.4")
    c = cfg.curriculum
    if c.base_steps < 1:
        problems.append("curriculum.base_steps must be >= 1")
    if len(c.step_ratio) != 4 or any(r <= 0 for r in c.step_ratio):
        problems.append("curriculum.step_ratio needs 4 positive numbers")
    if not 0.0 <= c.warmup_proportion < 1.0:
        problems.append("curriculum.warmup_proportion must be in [0, 1)")
    if c.maximum_learning_rate < 0:
        problems.append("curriculum.maximum_learning_rate must be >= 0")
    a = cfg.analysis
    b = a.boundaries
    if len(b) != 3 or b[0] < 1 or not b[0] < b[1] < b[2]:
        problems.append("analysis.boundaries needs 3 strictly ascending positive ints")
    if a.pairs < 1:
        problems.append("analysis.pairs must be >= 1")
    if cfg.tokenizer.vocab_size < 1:
        problems.append("tokenizer.vocab_size must be >= 1")
    if problems:
        raise ConfigError(problems)
