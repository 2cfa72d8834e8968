"""Sparse boolean-feature corpora: synthesis, splits, batching, and disk I/O.

Samples are sparse sets of enabled feature indices with a malware/benign
label. Features split into two groups: manifest features (attacker may
enable them) and code features (immutable under the threat model).

The synthetic generator plants discriminative rules of the form
``A and B and not C -> malware`` so that an unconstrained learner profits
from negative weights on the C ("exculpating") features, plus marker
features that give positive evidence either class. This keeps the corpus
attackable by enable-only perturbations while remaining learnable by a
monotone classifier.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .errors import FormatError, ParameterError, SplitError

BENIGN = 0
MALWARE = 1

_LABEL_TOKENS = {"benign": BENIGN, "malware": MALWARE}
_TOKEN_OF_LABEL = {BENIGN: "benign", MALWARE: "malware"}


class FeatureSpace:
    """Feature count plus the per-feature manifest (attacker-modifiable) flag."""

    def __init__(self, n_features: int, manifest_mask) -> None:
        if n_features <= 0:
            raise ParameterError(f"n_features must be positive, got {n_features}")
        mask = np.asarray(manifest_mask, dtype=bool)
        if mask.shape != (n_features,):
            raise ParameterError(
                f"manifest_mask length {mask.shape} does not match n_features {n_features}"
            )
        if not mask.any():
            raise ParameterError("feature space needs at least one manifest feature")
        self.n_features = int(n_features)
        self.manifest_mask = mask
        self.manifest_mask.setflags(write=False)

    @classmethod
    def prefix(cls, n_features: int, n_manifest: int) -> "FeatureSpace":
        """Space whose first ``n_manifest`` features are manifest, the rest code."""
        mask = np.zeros(n_features, dtype=bool)
        mask[:n_manifest] = True
        return cls(n_features, mask)

    @property
    def manifest_indices(self) -> np.ndarray:
        return np.flatnonzero(self.manifest_mask)

    @property
    def checksum(self) -> str:
        """Short stable digest binding models to this space."""
        h = hashlib.sha256()
        h.update(f"space v1 {self.n_features}\n".encode())
        h.update(self.manifest_indices.astype(np.int64).tobytes())
        return h.hexdigest()[:16]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FeatureSpace)
            and self.n_features == other.n_features
            and np.array_equal(self.manifest_mask, other.manifest_mask)
        )

    def __repr__(self) -> str:
        return (
            f"FeatureSpace(n_features={self.n_features},"
            f" n_manifest={int(self.manifest_mask.sum())})"
        )


@dataclass(frozen=True)
class Sample:
    """One application: strictly increasing enabled-feature indices plus label."""

    indices: tuple[int, ...]
    label: int

    def __post_init__(self) -> None:
        if self.label not in (BENIGN, MALWARE):
            raise ParameterError(f"label must be {BENIGN} or {MALWARE}, got {self.label}")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ParameterError("sample indices must be strictly increasing")

    @classmethod
    def from_indices(cls, indices, label: int) -> "Sample":
        """Canonicalize: sort and deduplicate before constructing."""
        return cls(tuple(sorted(set(int(i) for i in indices))), label)

    def with_enabled(self, index: int) -> "Sample":
        """Copy with one extra feature enabled (no-op if already enabled)."""
        if index in self.indices:
            return self
        return Sample(tuple(sorted(self.indices + (index,))), self.label)


@dataclass
class Dataset:
    space: FeatureSpace
    samples: list[Sample]
    split_tag: str = "unsplit"

    def __post_init__(self) -> None:
        if self.split_tag not in ("train", "test", "unsplit"):
            raise ParameterError(f"unknown split_tag {self.split_tag!r}")
        n = self.space.n_features
        for s in self.samples:
            if s.indices and (s.indices[0] < 0 or s.indices[-1] >= n):
                raise ParameterError(
                    f"sample index out of range for space with {n} features: {s.indices}"
                )

    def labels(self) -> np.ndarray:
        return np.fromiter((s.label for s in self.samples), dtype=np.int64, count=len(self.samples))

    def by_label(self, label: int) -> list[Sample]:
        return [s for s in self.samples if s.label == label]

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.space == other.space
            and self.samples == other.samples
            and self.split_tag == other.split_tag
        )


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic corpus generator.

    Desk-scale defaults mirror the target corpus statistics: ~55% manifest
    features, mean density 48 enabled features per sample, 8% malware.
    """

    n_features: int = 5000
    manifest_fraction: float = 0.55
    n_samples: int = 20000
    malware_fraction: float = 0.08
    mean_density: float = 48.0
    n_rules: int = 40
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_features <= 0 or self.n_samples <= 0:
            raise ParameterError("n_features and n_samples must be positive")
        if not (0.0 < self.manifest_fraction < 1.0):
            raise ParameterError(f"manifest_fraction must be in (0,1), got {self.manifest_fraction}")
        if not (0.0 < self.malware_fraction < 1.0):
            raise ParameterError(f"malware_fraction must be in (0,1), got {self.malware_fraction}")
        if not (0.0 < self.mean_density < self.n_features):
            raise ParameterError(
                f"mean_density must be in (0, n_features), got {self.mean_density}"
            )
        if self.n_rules < 0:
            raise ParameterError("n_rules must be non-negative")
        if self.n_rules > 0 and self.n_features < 3 * self.n_rules + 1:
            raise ParameterError(
                f"{self.n_features} features cannot host {self.n_rules} rules"
            )


@dataclass(frozen=True)
class _PlantedStructure:
    """Internal layout of rule and marker features for one generated corpus."""

    indicators: list[tuple[int, int]]
    exculpators: list[int]
    malware_markers: np.ndarray
    benign_markers: np.ndarray


def _plant_structure(spec: SynthSpec, space: FeatureSpace, rng: np.random.Generator) -> _PlantedStructure:
    manifest_pool = list(rng.permutation(space.manifest_indices))
    code_pool = list(rng.permutation(np.flatnonzero(~space.manifest_mask)))

    def take(prefer_code: bool) -> int:
        primary, secondary = (code_pool, manifest_pool) if prefer_code else (manifest_pool, code_pool)
        if primary:
            return int(primary.pop())
        if secondary:
            return int(secondary.pop())
        raise ParameterError("feature space too small for requested structure")

    indicators: list[tuple[int, int]] = []
    exculpators: list[int] = []
    for _ in range(spec.n_rules):
        # Exculpating features sit mostly in manifest space so the enable-only
        # attack has something to exploit; a minority land in code space and
        # stay out of the attacker's reach.
        prefer_manifest = rng.random() < 0.75 or not code_pool
        exculpators.append(take(prefer_code=not prefer_manifest))
        indicators.append((take(prefer_code=True), take(prefer_code=True)))

    n_markers = min(12, max(0, (len(manifest_pool) + len(code_pool)) // 4))
    malware_markers = np.array(
        sorted(take(prefer_code=True) for _ in range(n_markers)), dtype=np.int64
    )
    benign_markers = np.array(
        sorted(take(prefer_code=bool(i % 2)) for i in range(n_markers)), dtype=np.int64
    )
    return _PlantedStructure(indicators, exculpators, malware_markers, benign_markers)


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Generate a DREBIN-shaped synthetic corpus. Pure function of the spec.

    Guarantees: the malware count is exactly round(n_samples * malware_fraction),
    reruns with the same spec are bit-identical, and the empirical mean density
    lands near spec.mean_density (within 10% at desk scale).
    """
    rng = np.random.default_rng(spec.seed)
    n_manifest = min(spec.n_features, max(1, int(round(spec.n_features * spec.manifest_fraction))))
    space = FeatureSpace.prefix(spec.n_features, n_manifest)
    planted = _plant_structure(spec, space, rng)

    n_malware = int(round(spec.n_samples * spec.malware_fraction))
    labels = np.zeros(spec.n_samples, dtype=np.int64)
    labels[:n_malware] = MALWARE
    labels = rng.permutation(labels)

    p_marker_own, p_marker_cross = 0.35, 0.02
    p_confuser = 0.4
    n_mm = len(planted.malware_markers)
    n_bm = len(planted.benign_markers)
    exp_structured_mal = (2.0 if spec.n_rules else 0.0) + p_marker_own * n_mm + p_marker_cross * n_bm
    exp_structured_ben = (p_confuser * 3.0 if spec.n_rules else 0.0) + 0.25 * n_bm + p_marker_cross * n_mm
    lam_mal = max(0.0, spec.mean_density - exp_structured_mal)
    lam_ben = max(0.0, spec.mean_density - exp_structured_ben)

    samples: list[Sample] = []
    all_features = spec.n_features
    for label in labels:
        enabled: set[int] = set()
        if label == MALWARE:
            if spec.n_rules:
                a, b = planted.indicators[rng.integers(spec.n_rules)]
                enabled.update((a, b))
            enabled.update(planted.malware_markers[rng.random(n_mm) < p_marker_own])
            enabled.update(planted.benign_markers[rng.random(n_bm) < p_marker_cross])
            lam = lam_mal
        else:
            if spec.n_rules and rng.random() < p_confuser:
                r = rng.integers(spec.n_rules)
                a, b = planted.indicators[r]
                enabled.update((a, b, planted.exculpators[r]))
            enabled.update(planted.benign_markers[rng.random(n_bm) < 0.25])
            enabled.update(planted.malware_markers[rng.random(n_mm) < p_marker_cross])
            lam = lam_ben
        k = min(int(rng.poisson(lam)), all_features - len(enabled))
        if k > 0:
            enabled.update(rng.choice(all_features, size=k, replace=False).tolist())
        samples.append(Sample.from_indices(enabled, int(label)))
    return Dataset(space, samples, split_tag="unsplit")


def split(d: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test partition; exact, disjoint, deterministic per seed."""
    if not (0.0 < test_fraction < 1.0):
        raise ParameterError(f"test_fraction must be in (0,1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test_positions: set[int] = set()
    for label in (BENIGN, MALWARE):
        positions = [i for i, s in enumerate(d.samples) if s.label == label]
        n = len(positions)
        if n < 2:
            raise SplitError(
                f"cannot split: label {_TOKEN_OF_LABEL.get(label, label)} has {n} sample(s)"
            )
        k = int(round(n * test_fraction))
        k = min(max(k, 1), n - 1)
        chosen = rng.permutation(np.array(positions))[:k]
        test_positions.update(int(i) for i in chosen)
    train_samples = [s for i, s in enumerate(d.samples) if i not in test_positions]
    test_samples = [s for i, s in enumerate(d.samples) if i in test_positions]
    return (
        Dataset(d.space, train_samples, split_tag="train"),
        Dataset(d.space, test_samples, split_tag="test"),
    )


def sample_batch_indices(
    d: Dataset, batch_size: int, malware_ratio: float, rng: np.random.Generator
) -> np.ndarray:
    """Positions of a ratio-exact mini-batch within d.samples.

    Exactly round(batch_size * malware_ratio) malware positions. Either class
    is drawn with replacement only when its pool is smaller than required.
    """
    if batch_size <= 0:
        raise ParameterError(f"batch_size must be positive, got {batch_size}")
    if not (0.0 <= malware_ratio <= 1.0):
        raise ParameterError(f"malware_ratio must be in [0,1], got {malware_ratio}")
    labels = d.labels()
    mal_pool = np.flatnonzero(labels == MALWARE)
    ben_pool = np.flatnonzero(labels == BENIGN)
    if len(mal_pool) == 0 or len(ben_pool) == 0:
        raise ParameterError("batch sampling needs at least one sample of each label")
    n_mal = int(round(batch_size * malware_ratio))
    n_ben = batch_size - n_mal

    def draw(pool: np.ndarray, k: int) -> np.ndarray:
        if k == 0:
            return np.empty(0, dtype=np.int64)
        return rng.choice(pool, size=k, replace=len(pool) < k)

    return np.concatenate([draw(mal_pool, n_mal), draw(ben_pool, n_ben)])


def sample_batch(
    d: Dataset, batch_size: int, malware_ratio: float, rng: np.random.Generator
) -> list[Sample]:
    return [d.samples[i] for i in sample_batch_indices(d, batch_size, malware_ratio, rng)]


def save_dataset(d: Dataset, path) -> None:
    """Write the line-oriented dataset format: `<label> <idx> <idx> ...`."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for s in d.samples:
            fh.write(" ".join([_TOKEN_OF_LABEL[s.label], *map(str, s.indices)]))
            fh.write("\n")


def load_dataset(path, space: FeatureSpace, split_tag: str = "unsplit") -> Dataset:
    """Parse a dataset file against a feature space; errors name line numbers."""
    samples: list[Sample] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            tokens = line.split(" ")
            if tokens[0] not in _LABEL_TOKENS:
                raise FormatError(f"{path}:{lineno}: unknown label token {tokens[0]!r}")
            try:
                indices = [int(t) for t in tokens[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad feature index: {exc}") from exc
            for a, b in zip(indices, indices[1:]):
                if b <= a:
                    raise FormatError(f"{path}:{lineno}: indices not strictly increasing")
            if indices and (indices[0] < 0 or indices[-1] >= space.n_features):
                raise FormatError(
                    f"{path}:{lineno}: feature index out of range 0..{space.n_features - 1}"
                )
            samples.append(Sample(tuple(indices), _LABEL_TOKENS[tokens[0]]))
    return Dataset(space, samples, split_tag=split_tag)


def save_feature_space(space: FeatureSpace, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"n_features {space.n_features}\n")
        for idx in space.manifest_indices:
            fh.write(f"manifest {idx}\n")


def load_feature_space(path) -> FeatureSpace:
    n_features = None
    manifest: list[int] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if lineno == 1:
                if len(tokens) != 2 or tokens[0] != "n_features":
                    raise FormatError(f"{path}:1: expected 'n_features <N>' header")
                try:
                    n_features = int(tokens[1])
                except ValueError as exc:
                    raise FormatError(f"{path}:1: bad feature count") from exc
                continue
            if len(tokens) != 2 or tokens[0] != "manifest":
                raise FormatError(f"{path}:{lineno}: expected 'manifest <idx>'")
            try:
                idx = int(tokens[1])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad manifest index") from exc
            if n_features is None or not (0 <= idx < n_features):
                raise FormatError(f"{path}:{lineno}: manifest index out of range")
            manifest.append(idx)
    if n_features is None:
        raise FormatError(f"{path}: empty feature-space file")
    mask = np.zeros(n_features, dtype=bool)
    mask[manifest] = True
    if not mask.any():
        raise FormatError(f"{path}: no manifest features listed")
    return FeatureSpace(n_features, mask)


def mean_density(d: Dataset) -> float:
    if not d.samples:
        return 0.0
    return sum(len(s.indices) for s in d.samples) / len(d.samples)


def to_csr(samples: list[Sample], n_features: int) -> sparse.csr_matrix:
    """Stack samples into a binary CSR matrix (rows in list order)."""
    indptr = np.zeros(len(samples) + 1, dtype=np.int64)
    for i, s in enumerate(samples):
        indptr[i + 1] = indptr[i] + len(s.indices)
    indices = np.fromiter(
        (i for s in samples for i in s.indices), dtype=np.int64, count=int(indptr[-1])
    )
    data = np.ones(len(indices), dtype=np.float64)
    return sparse.csr_matrix((data, indices, indptr), shape=(len(samples), n_features))


def dataset_from_arrays(X, y, space: FeatureSpace | None = None, split_tag: str = "unsplit") -> Dataset:
    """Build a Dataset from a dense/sparse binary matrix and a 0/1 label vector."""
    X = sparse.csr_matrix(X)
    y = np.asarray(y).ravel()
    if X.shape[0] != len(y):
        raise ParameterError(f"X has {X.shape[0]} rows but y has {len(y)} labels")
    if space is None:
        space = FeatureSpace.prefix(X.shape[1], X.shape[1])
    elif space.n_features != X.shape[1]:
        raise ParameterError(
            f"X has {X.shape[1]} columns but space expects {space.n_features}"
        )
    samples = [
        Sample.from_indices(X.indices[X.indptr[i]:X.indptr[i + 1]], int(y[i]))
        for i in range(X.shape[0])
    ]
    return Dataset(space, samples, split_tag=split_tag)


def relabel(d: Dataset, split_tag: str) -> Dataset:
    return replace(d, split_tag=split_tag)
