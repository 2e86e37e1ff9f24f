"""Dataset records, the JSONL + ``.eiet`` sidecar format, and the synthetic generator.

The first line of a dataset file is a header
``{"schema": "eie-dataset", "version": 1, "guidance_dim": N}``; every later line is
one record ``{"id", "features_b", "features_f", "p_b", "p_f", "summary"}`` where the
feature fields are paths relative to the file (or inline nested lists).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import eiet
from .rng import Rng
from .vocab import tokenize

SCHEMA = "eie-dataset"
SCHEMA_VERSION = 1

# CheXpert observation order used for labels and 14-wide guidance
OBSERVATIONS = (
    "pneumonia", "fracture", "consolidation", "enlarged cardiomediastinum", "no finding",
    "pleural other", "cardiomegaly", "pneumothorax", "atelectasis", "support devices",
    "edema", "pleural effusion", "lung lesion", "lung opacity",
)
# the five observations the 5-wide expert classifier reports, in report order
GUIDANCE5 = ("atelectasis", "cardiomegaly", "consolidation", "edema", "pleural effusion")

ENTITY_TERMS = (
    "atelectasis", "edema", "pneumothorax", "cardiomegaly", "consolidation",
    "cardiac silhouette", "fracture", "lung opacity", "pleural effusion", "pneumonia",
)

# plantable findings: surface phrase -> observation it labels as
FINDINGS = {
    "atelectasis": "atelectasis",
    "cardiomegaly": "cardiomegaly",
    "consolidation": "consolidation",
    "edema": "edema",
    "pleural effusion": "pleural effusion",
    "pneumothorax": "pneumothorax",
    "pneumonia": "pneumonia",
    "fracture": "fracture",
    "lung opacity": "lung opacity",
}
# extra phrases available when guidance covers all 14 observations
FINDINGS14 = {
    "enlarged cardiomediastinum": "enlarged cardiomediastinum",
    "pleural thickening": "pleural other",
    "lung nodule": "lung lesion",
    "picc line": "support devices",
}

CHANGES = ("new", "worsened", "improved", "unchanged", "resolved")


class DatasetError(ValueError):
    pass


def guidance_observations(guidance_dim: int) -> tuple[str, ...]:
    if guidance_dim == 5:
        return GUIDANCE5
    if guidance_dim == 14:
        return OBSERVATIONS
    raise ValueError(f"no observation list for guidance_dim={guidance_dim}")


@dataclass
class DatasetRecord:
    id: str
    features_b: np.ndarray
    features_f: np.ndarray
    p_b: np.ndarray
    p_f: np.ndarray
    summary: str

    def validate(self, guidance_dim: int, feature_shape: tuple[int, int] | None = None) -> None:
        if self.features_b.ndim != 2 or self.features_b.shape != self.features_f.shape:
            raise DatasetError(f"record {self.id!r}: feature shapes {self.features_b.shape} / {self.features_f.shape}")
        if feature_shape is not None and self.features_b.shape != tuple(feature_shape):
            raise DatasetError(f"record {self.id!r}: feature shape {self.features_b.shape}, expected {tuple(feature_shape)}")
        for name, p in (("p_b", self.p_b), ("p_f", self.p_f)):
            if p.shape != (guidance_dim,):
                raise DatasetError(f"record {self.id!r}: {name} has length {p.size}, expected {guidance_dim}")
            if not (np.all(p >= 0.0) and np.all(p <= 1.0)):
                raise DatasetError(f"record {self.id!r}: {name} has entries outside [0, 1]")
        if not tokenize(self.summary):
            raise DatasetError(f"record {self.id!r}: empty summary")


@dataclass
class Dataset:
    guidance_dim: int
    records: list[DatasetRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def feature_shape(self) -> tuple[int, int] | None:
        return self.records[0].features_b.shape if self.records else None

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(self.guidance_dim, [self.records[i] for i in indices])


def split_dataset(ds: Dataset, holdout_fraction: float) -> tuple[Dataset, Dataset]:
    """Deterministic split: the last ``holdout_fraction`` of records are held out."""
    n_hold = int(round(len(ds) * holdout_fraction))
    cut = len(ds) - n_hold
    return ds.subset(range(cut)), ds.subset(range(cut, len(ds)))


# ---------------------------------------------------------------- I/O

def save_dataset(ds: Dataset, path: str | os.PathLike, inline: bool = False) -> Path:
    """Write ``path`` (JSONL) plus one ``.eiet`` sidecar per feature grid under ``features/``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    feat_dir = path.parent / "features"
    lines = [json.dumps({"schema": SCHEMA, "version": SCHEMA_VERSION, "guidance_dim": ds.guidance_dim})]
    for rec in ds.records:
        rec.validate(ds.guidance_dim)
        if inline:
            fb, ff = rec.features_b.tolist(), rec.features_f.tolist()
        else:
            feat_dir.mkdir(exist_ok=True)
            fb, ff = f"features/{rec.id}_b.eiet", f"features/{rec.id}_f.eiet"
            eiet.save(path.parent / fb, rec.features_b)
            eiet.save(path.parent / ff, rec.features_f)
        lines.append(json.dumps({
            "id": rec.id, "features_b": fb, "features_f": ff,
            "p_b": [float(x) for x in rec.p_b], "p_f": [float(x) for x in rec.p_f],
            "summary": rec.summary,
        }))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _load_features(value, base: Path, lineno: int) -> np.ndarray:
    if isinstance(value, str):
        fpath = base / value
        if not fpath.exists():
            raise DatasetError(f"line {lineno}: missing feature file {fpath}")
        try:
            return eiet.load(fpath)
        except eiet.EietFormatError as err:
            raise DatasetError(f"line {lineno}: {err}") from err
    return np.asarray(value, dtype=np.float32)


def load_dataset(path: str | os.PathLike, feature_shape: tuple[int, int] | None = None) -> Dataset:
    path = Path(path)
    if path.is_dir():
        path = path / "dataset.jsonl"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise OSError(f"cannot read dataset {path}: {err.strerror or err}") from err
    lines = text.splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty file, expected a schema header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as err:
        raise DatasetError(f"{path} line 1: malformed JSON header ({err.msg})") from err
    if header.get("schema") != SCHEMA or header.get("version") != SCHEMA_VERSION:
        raise DatasetError(f"{path} line 1: expected schema {SCHEMA!r} version {SCHEMA_VERSION}, got {header}")
    gdim = int(header["guidance_dim"])
    ds = Dataset(gdim)
    keys = {"id", "features_b", "features_f", "p_b", "p_f", "summary"}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise DatasetError(f"{path} line {lineno}: malformed JSON ({err.msg})") from err
        missing = keys - set(obj)
        if missing:
            raise DatasetError(f"{path} line {lineno}: missing fields {sorted(missing)}")
        rec = DatasetRecord(
            id=str(obj["id"]),
            features_b=_load_features(obj["features_b"], path.parent, lineno),
            features_f=_load_features(obj["features_f"], path.parent, lineno),
            p_b=np.asarray(obj["p_b"], dtype=np.float32),
            p_f=np.asarray(obj["p_f"], dtype=np.float32),
            summary=str(obj["summary"]),
        )
        try:
            rec.validate(gdim, feature_shape or (ds.feature_shape if ds.records else None))
        except DatasetError as err:
            raise DatasetError(f"{path} line {lineno}: {err}") from err
        ds.records.append(rec)
    return ds


# ---------------------------------------------------------------- synthetic data

@dataclass
class SyntheticGenConfig:
    num_records: int = 32
    guidance_dim: int = 5
    feature_dim: int = 1024
    image_tokens: int = 49
    noise: float = 1.0
    signal: float = 1.0
    informativeness: float = 1.0
    grammar_seed: int = 0
    max_findings: int = 2

    def __post_init__(self):
        if self.num_records < 1:
            raise ValueError("num_records must be >= 1")
        if not 0.0 <= self.informativeness <= 1.0:
            raise ValueError("informativeness must lie in [0, 1]")
        guidance_observations(self.guidance_dim)


@dataclass
class Fact:
    phrase: str
    change: str


PREFIXES = ("", "compared to the prior study ,", "since the last exam ,")
PHRASINGS = {
    "new": ("there is new {e}", "{e} is new"),
    "worsened": ("there is worsening {e}", "{e} has worsened"),
    "improved": ("there is improving {e}", "{e} has improved"),
    "unchanged": ("there is unchanged {e}", "{e} is unchanged"),
    # negation cues precede the entity so the rule labeler reads them as absent
    "resolved": ("no more {e}", "no longer any {e}"),
}


def realize_summary(facts: Sequence[Fact], prefix: str, phrasing: Sequence[int]) -> str:
    parts = [PHRASINGS[f.change][k].format(e=f.phrase) for f, k in zip(facts, phrasing)]
    body = " and ".join(parts)
    return " ".join(t for t in (prefix, body, ".") if t)


def _severities(change: str, rng: Rng) -> tuple[float, float]:
    """(baseline, follow-up) severity in [0, 1]; 0 means absent."""
    if change in ("improved", "worsened"):
        lo = 0.2 + 0.3 * rng.uniform()
        hi = lo + 0.3 + 0.2 * rng.uniform()
        return (hi, lo) if change == "improved" else (lo, hi)
    s = 0.3 + 0.7 * rng.uniform()
    if change == "new":
        return 0.0, s
    if change == "resolved":
        return s, 0.0
    return s, s


def _probability(severity: float, rng: Rng) -> float:
    if severity > 0:
        return 0.55 + 0.4 * severity
    return 0.05 + 0.4 * rng.uniform()


class _Layout:
    """Fixed per-generator planting geometry: which cells and direction each finding uses."""

    def __init__(self, phrases: Sequence[str], cfg: SyntheticGenConfig, rng: Rng):
        self.cells: dict[str, np.ndarray] = {}
        self.direction: dict[str, np.ndarray] = {}
        n_cells = max(1, cfg.image_tokens // 12)
        for ph in phrases:
            self.cells[ph] = np.sort(rng.choice(cfg.image_tokens, size=n_cells, replace=False))
            u = rng.normal(size=cfg.feature_dim)
            self.direction[ph] = (u / np.linalg.norm(u) * np.sqrt(cfg.feature_dim)).astype(np.float32)


def synth_generate(cfg: SyntheticGenConfig, seed: int = 0) -> Dataset:
    """Planted-fact dataset: summaries, feature grids and guidance share one ground truth."""
    obs = guidance_observations(cfg.guidance_dim)
    findings = dict(FINDINGS)
    if cfg.guidance_dim == 14:
        findings.update(FINDINGS14)
    phrases = sorted(findings)
    root = Rng(seed)
    layout = _Layout(phrases, cfg, Rng(cfg.grammar_seed).child("layout"))
    gram = root.child("grammar")
    feat = root.child("features")
    guid = root.child("guidance")
    width = len(str(cfg.num_records - 1))

    ds = Dataset(cfg.guidance_dim)
    for i in range(cfg.num_records):
        n_facts = 1 + int(gram.integers(0, cfg.max_findings))
        picks = gram.choice(len(phrases), size=n_facts, replace=False)
        facts = [Fact(phrases[j], CHANGES[int(gram.integers(0, len(CHANGES)))]) for j in sorted(picks)]
        prefix = PREFIXES[int(gram.integers(0, len(PREFIXES)))]
        phrasing = [int(gram.integers(0, 2)) for _ in facts]
        summary = realize_summary(facts, prefix, phrasing)

        anatomy = feat.normal(size=(cfg.image_tokens, cfg.feature_dim))
        fb = anatomy + cfg.noise * feat.normal(size=anatomy.shape)
        ff = anatomy + cfg.noise * feat.normal(size=anatomy.shape)
        sev_b = np.zeros(len(obs))
        sev_f = np.zeros(len(obs))
        for fact in facts:
            sb, sf = _severities(fact.change, gram)
            cells, u = layout.cells[fact.phrase], layout.direction[fact.phrase]
            fb[cells] += cfg.signal * sb * u
            ff[cells] += cfg.signal * sf * u
            o = findings[fact.phrase]
            if o in obs:
                k = obs.index(o)
                sev_b[k], sev_f[k] = sb, sf

        truthful = guid.uniform() < cfg.informativeness
        if not truthful:
            # independent draw from the same marginal: presence and change are resampled
            sev_b = np.zeros(len(obs))
            sev_f = np.zeros(len(obs))
            n_fake = 1 + int(guid.integers(0, cfg.max_findings))
            for k in guid.choice(len(phrases), size=n_fake, replace=False):
                o = findings[phrases[int(k)]]
                if o in obs:
                    sb, sf = _severities(CHANGES[int(guid.integers(0, len(CHANGES)))], guid)
                    sev_b[obs.index(o)], sev_f[obs.index(o)] = sb, sf
        p_b = np.array([_probability(s, guid) for s in sev_b], dtype=np.float32)
        p_f = np.array([_probability(s, guid) for s in sev_f], dtype=np.float32)
        ds.records.append(DatasetRecord(
            id=f"r{i:0{width}d}", features_b=fb.astype(np.float32), features_f=ff.astype(np.float32),
            p_b=p_b, p_f=p_f, summary=summary,
        ))
    return ds
