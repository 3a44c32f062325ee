"""Synthetic biased classification data.

Each sample is ``concat(core_block(y), spur_block(s_1), ..., spur_block(s_S))``
plus isotropic Gaussian noise, where a block for value ``v`` is ``sep * e_v``
in a block of the configured width (zero when ``v`` does not fit). Shortcut
values agree with the class for a deterministic fraction ``rho`` of every
class; the remaining samples cycle through the other values.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigInvalid, FormatError

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
_SPLIT_IDS = {name: k for k, name in enumerate(SPLITS)}
HEADER_TAG = "#dbforge-dataset"
FORMAT_VERSION = "v1"


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    shortcuts: np.ndarray
    C: int
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        sc = np.asarray(self.shortcuts, dtype=np.int64)
        if sc.ndim == 1:
            sc = sc[:, None]
        if sc.size == 0:
            sc = sc.reshape(len(self.labels), 0)
        self.shortcuts = sc
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be N x d with one label per row")
        if self.shortcuts.shape[0] != self.labels.shape[0]:
            raise ValueError("shortcut rows must match label count")
        for arr in (self.labels, self.shortcuts):
            if arr.size and (arr.min() < 0 or arr.max() >= self.C):
                raise ValueError(f"labels must lie in [0, {self.C})")
        if not np.isfinite(self.features).all():
            raise ValueError("features must be finite")

    @property
    def N(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def S(self) -> int:
        return self.shortcuts.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.shortcuts[idx], self.C, self.name)

    def without_shortcuts(self) -> "LabeledDataset":
        return LabeledDataset(self.features, self.labels, np.zeros((self.N, 0), np.int64), self.C, self.name)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.C == other.C
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.shortcuts, other.shortcuts)
        )


@dataclass
class GeneratorConfig:
    C: int = 2
    n_per_class: int = 2000
    rho: tuple = (0.95,)
    d_core: int = 10
    d_spur: int = 10
    core_sep: float = 1.5
    spur_sep: float = 4.0
    noise_std: float = 1.0
    seed: int = 0
    val_per_class: int = 500
    test_per_class: int = 1000
    test_unbiased: bool = True

    def __post_init__(self):
        if isinstance(self.rho, (int, float)):
            self.rho = (float(self.rho),)
        self.rho = tuple(float(r) for r in self.rho)

    @property
    def S(self) -> int:
        return len(self.rho)

    def split_sizes(self):
        return {"train": self.n_per_class, "val": self.val_per_class, "test": self.test_per_class}

    def validate(self):
        if not isinstance(self.C, int) or self.C < 2:
            raise ConfigInvalid("need at least 2 classes", "C")
        if self.S not in (1, 2):
            raise ConfigInvalid("one or two shortcut ratios supported", "rho")
        for r in self.rho:
            if not (0.0 < r <= 1.0) or math.isnan(r):
                raise ConfigInvalid(f"alignment ratio {r} outside (0, 1]", "rho")
        for key in ("d_core", "d_spur", "n_per_class"):
            if getattr(self, key) < 1:
                raise ConfigInvalid("must be >= 1", key)
        for key in ("val_per_class", "test_per_class"):
            if getattr(self, key) < 0:
                raise ConfigInvalid("must be >= 0", key)
        if not self.noise_std > 0:
            raise ConfigInvalid("must be positive", "noise_std")
        if self.core_sep < 0 or self.spur_sep < 0:
            raise ConfigInvalid("separations must be nonnegative", "spur_sep")
        if self.spur_sep <= self.core_sep:
            logger.warning(
                "spur_sep %.3g <= core_sep %.3g: the shortcut is not easier than the core signal",
                self.spur_sep, self.core_sep,
            )
        return self


def _prototypes(width: int, C: int, sep: float) -> np.ndarray:
    proto = np.zeros((C, width))
    k = min(width, C)
    proto[np.arange(k), np.arange(k)] = sep
    return proto


def _aligned_counts(n: int, rho) -> list:
    """Per-class counts of the shortcut-agreement cells.

    For one shortcut: [aligned, conflicting]. For two: [both aligned,
    A aligned/B conflicting, A conflicting/B aligned, both conflicting], each
    rounded and the rounding remainder put on the largest cell.
    """
    if len(rho) == 1:
        a = int(round(rho[0] * n))
        return [a, n - a]
    r1, r2 = rho
    cells = [
        int(round(r1 * r2 * n)),
        int(round(r1 * (1 - r2) * n)),
        int(round((1 - r1) * r2 * n)),
        int(round((1 - r1) * (1 - r2) * n)),
    ]
    rem = n - sum(cells)
    cells[int(np.argmax(cells))] += rem
    return cells


def _shortcut_columns(c: int, n: int, C: int, rho) -> np.ndarray:
    others = [v for v in range(C) if v != c]

    def column(aligned_mask):
        col = np.full(n, c, dtype=np.int64)
        conf = np.flatnonzero(~aligned_mask)
        col[conf] = [others[k % len(others)] for k in range(conf.size)]
        return col

    cells = _aligned_counts(n, rho)
    if len(rho) == 1:
        mask = np.arange(n) < cells[0]
        return column(mask)[:, None]
    # cell order: (A ok, B ok), (A ok, B off), (A off, B ok), (A off, B off)
    a_ok = np.concatenate([np.ones(cells[0], bool), np.ones(cells[1], bool),
                           np.zeros(cells[2], bool), np.zeros(cells[3], bool)])
    b_ok = np.concatenate([np.ones(cells[0], bool), np.zeros(cells[1], bool),
                           np.ones(cells[2], bool), np.zeros(cells[3], bool)])
    return np.stack([column(a_ok), column(b_ok)], axis=1)


def _noise_stream(seed: int, split: str, c: int) -> np.random.Generator:
    # counter-based stream keyed on (seed, split, class); row k of the draw
    # is sample k of that class, independent of any scheduling
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=(_SPLIT_IDS[split], c))
    return np.random.Generator(np.random.Philox(ss))


def _generate_split(cfg: GeneratorConfig, split: str, n: int, rho) -> LabeledDataset:
    core = _prototypes(cfg.d_core, cfg.C, cfg.core_sep)
    spur = _prototypes(cfg.d_spur, cfg.C, cfg.spur_sep)
    d = cfg.d_core + cfg.S * cfg.d_spur
    feats, labels, shorts = [], [], []
    for c in range(cfg.C):
        sc = _shortcut_columns(c, n, cfg.C, rho)
        blocks = [np.repeat(core[c][None, :], n, axis=0)]
        for k in range(cfg.S):
            blocks.append(spur[sc[:, k]])
        mean = np.concatenate(blocks, axis=1)
        noise = _noise_stream(cfg.seed, split, c).standard_normal((n, d))
        feats.append(mean + cfg.noise_std * noise)
        labels.append(np.full(n, c, dtype=np.int64))
        shorts.append(sc)
    if n == 0:
        return LabeledDataset(np.zeros((0, d)), np.zeros(0, np.int64), np.zeros((0, cfg.S), np.int64), cfg.C, split)
    return LabeledDataset(np.concatenate(feats), np.concatenate(labels), np.concatenate(shorts), cfg.C, split)


def generate(cfg: GeneratorConfig) -> dict:
    cfg.validate()
    sizes = cfg.split_sizes()
    out = {}
    for split in SPLITS:
        rho = cfg.rho
        if split == "test" and cfg.test_unbiased:
            rho = tuple(1.0 / cfg.C for _ in cfg.rho)
        out[split] = _generate_split(cfg, split, sizes[split], rho)
    return out


def generate_single_shortcut(cfg: GeneratorConfig) -> dict:
    if cfg.S != 1:
        raise ConfigInvalid(f"expected one shortcut ratio, got {cfg.S}", "rho")
    return generate(cfg)


def generate_multi_shortcut(cfg: GeneratorConfig) -> dict:
    if cfg.S != 2:
        raise ConfigInvalid(f"expected two shortcut ratios, got {cfg.S}", "rho")
    return generate(cfg)


def with_seed(cfg: GeneratorConfig, seed: int) -> GeneratorConfig:
    return replace(cfg, seed=seed)


# --- file format -----------------------------------------------------------

def save_dataset(ds: LabeledDataset, path) -> None:
    lines = [f"{HEADER_TAG} {FORMAT_VERSION} n={ds.N} d={ds.d} c={ds.C} shortcuts={ds.S}"]
    for x, y, s in zip(ds.features.tolist(), ds.labels.tolist(), ds.shortcuts.tolist()):
        lines.append(",".join([repr(v) for v in x] + [str(y)] + [str(v) for v in s]))
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _parse_header(line: str):
    parts = line.split()
    if len(parts) != 6 or parts[0] != HEADER_TAG:
        raise FormatError(f"bad header {line!r}", 1)
    if parts[1] != FORMAT_VERSION:
        raise FormatError(f"unsupported version {parts[1]!r}", 1)
    dims = {}
    for tok, key in zip(parts[2:], ("n", "d", "c", "shortcuts")):
        k, _, v = tok.partition("=")
        if k != key:
            raise FormatError(f"expected {key}=..., got {tok!r}", 1)
        try:
            dims[key] = int(v)
        except ValueError:
            raise FormatError(f"non-integer {key}={v!r}", 1) from None
    if dims["n"] < 0 or dims["d"] < 1 or dims["c"] < 2 or dims["shortcuts"] not in (0, 1, 2):
        raise FormatError(f"invalid dimensions {dims}", 1)
    return dims["n"], dims["d"], dims["c"], dims["shortcuts"]


def parse_dataset(text: str, name: str = "") -> LabeledDataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("empty file", 1)
    n, d, C, S = _parse_header(lines[0])
    rows = lines[1:]
    if len(rows) != n:
        raise FormatError(f"header declares {n} rows, found {len(rows)}", len(lines) + 1)
    X = np.empty((n, d))
    y = np.empty(n, np.int64)
    sc = np.empty((n, S), np.int64)
    for k, row in enumerate(rows):
        lineno = k + 2
        fields = row.split(",")
        if len(fields) != d + 1 + S:
            raise FormatError(f"row {k} has {len(fields)} fields, expected {d + 1 + S}", lineno)
        try:
            X[k] = [float(v) for v in fields[:d]]
            ints = [int(v) for v in fields[d:]]
        except ValueError as exc:
            raise FormatError(f"row {k}: {exc}", lineno) from None
        if not np.isfinite(X[k]).all():
            raise FormatError(f"row {k} has non-finite features", lineno)
        for v in ints:
            if not 0 <= v < C:
                raise FormatError(f"row {k} label {v} outside [0, {C})", lineno)
        y[k] = ints[0]
        sc[k] = ints[1:]
    return LabeledDataset(X, y, sc, C, name)


def load_dataset(path) -> LabeledDataset:
    with open(path, encoding="utf-8", newline="\n") as fh:
        text = fh.read()
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return parse_dataset(text, name)
