"""Sparse binary datasets: types, JSONL I/O, splitting, synthetic generation.

Samples are sets of active feature indices over a fixed dimension ``q``.
Labels are binary (benign / malicious); malicious samples may carry a family
identifier. The synthetic generator plants a latent feature pattern per
malware family so that family membership is recoverable from the features,
which is the structural property the selective attack exploits.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import sparse

from .errors import ConfigError, DataError


class Label(enum.Enum):
    BENIGN = "benign"
    MALICIOUS = "malicious"

    @property
    def as_int(self) -> int:
        """Malicious is the positive class (1)."""
        return 1 if self is Label.MALICIOUS else 0


@dataclass(frozen=True)
class FeatureVector:
    """Set of active binary features over dimension ``dim``.

    ``active`` is a sorted tuple of distinct indices in [0, dim).
    """

    dim: int
    active: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise DataError(f"dimension must be positive, got {self.dim}")
        prev = -1
        for idx in self.active:
            if idx <= prev:
                raise DataError("active indices must be sorted and distinct")
            prev = idx
        if self.active and self.active[-1] >= self.dim:
            raise DataError(
                f"feature index {self.active[-1]} out of range for dim {self.dim}"
            )

    @classmethod
    def from_indices(cls, dim: int, indices: Iterable[int]) -> "FeatureVector":
        return cls(dim, tuple(sorted({int(i) for i in indices})))

    def to_dense(self) -> np.ndarray:
        x = np.zeros(self.dim)
        if self.active:
            x[list(self.active)] = 1.0
        return x

    def __len__(self) -> int:
        return len(self.active)


@dataclass(frozen=True)
class LabeledSample:
    vector: FeatureVector
    label: Label
    family: str | None = None

    def __post_init__(self) -> None:
        if self.family is not None and self.label is Label.BENIGN:
            raise DataError("benign samples cannot carry a family identifier")


class Dataset:
    """Immutable ordered collection of samples sharing one dimension."""

    def __init__(self, dim: int, samples: Sequence[LabeledSample]):
        for s in samples:
            if s.vector.dim != dim:
                raise DataError(
                    f"sample dim {s.vector.dim} does not match dataset dim {dim}"
                )
        self.dim = dim
        self.samples = list(samples)
        self._csr: sparse.csr_matrix | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[LabeledSample]:
        return iter(self.samples)

    def to_csr(self) -> sparse.csr_matrix:
        """CSR matrix of shape (n, dim) with float64 ones; cached."""
        if self._csr is None:
            indptr = np.zeros(len(self.samples) + 1, dtype=np.int64)
            for i, s in enumerate(self.samples):
                indptr[i + 1] = indptr[i] + len(s.vector.active)
            indices = np.empty(indptr[-1], dtype=np.int32)
            for i, s in enumerate(self.samples):
                indices[indptr[i] : indptr[i + 1]] = s.vector.active
            data = np.ones(indptr[-1])
            self._csr = sparse.csr_matrix(
                (data, indices, indptr), shape=(len(self.samples), self.dim)
            )
        return self._csr

    def labels_array(self) -> np.ndarray:
        return np.array([s.label.as_int for s in self.samples], dtype=np.int8)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(self.dim, [self.samples[i] for i in indices])

    def benign_indices(self) -> np.ndarray:
        return np.array(
            [i for i, s in enumerate(self.samples) if s.label is Label.BENIGN],
            dtype=np.int64,
        )

    def malware_indices(self) -> np.ndarray:
        return np.array(
            [i for i, s in enumerate(self.samples) if s.label is Label.MALICIOUS],
            dtype=np.int64,
        )

    def family_indices(self, family: str) -> np.ndarray:
        return np.array(
            [i for i, s in enumerate(self.samples) if s.family == family],
            dtype=np.int64,
        )

    def families(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.samples:
            if s.family is not None:
                seen.setdefault(s.family)
        return list(seen)

    def concat(self, other: "Dataset") -> "Dataset":
        if other.dim != self.dim:
            raise DataError("cannot concatenate datasets of different dimensions")
        return Dataset(self.dim, self.samples + other.samples)


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """One JSON object per line: {"label", "family", "features"}."""
    with open(path, "w") as fh:
        for s in ds.samples:
            fh.write(
                json.dumps(
                    {
                        "label": s.label.value,
                        "family": s.family,
                        "features": list(s.vector.active),
                    }
                )
            )
            fh.write("\n")


def load_dataset(path: str | Path, dim: int) -> Dataset:
    """Parse a JSONL dataset file; dimension is supplied out-of-band."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    samples: list[LabeledSample] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                label = Label(obj["label"])
                family = obj.get("family")
                features = obj["features"]
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}: malformed record at line {lineno}: {exc}")
            for idx in features:
                if not isinstance(idx, int) or idx < 0 or idx >= dim:
                    raise DataError(
                        f"{path}: line {lineno}: feature index {idx} out of "
                        f"range for dim {dim}"
                    )
            try:
                vector = FeatureVector.from_indices(dim, features)
                samples.append(LabeledSample(vector, label, family))
            except DataError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}")
    return Dataset(dim, samples)


def split_train_test(
    ds: Dataset, train_fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Random partition; the train side gets floor(n * fraction) samples."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_train = int(np.floor(len(ds) * train_fraction))
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    return ds.subset(train_idx), ds.subset(test_idx)


@dataclass(frozen=True)
class SyntheticSpec:
    """Family-structured synthetic corpus specification.

    Feature layout (disjoint blocks, lowest indices first):
      * one latent-pattern block of ``family_pattern_size`` per malware family,
      * a shared malicious pool of ``shared_pool_size`` features,
      * one pattern block of ``benign_pattern_size`` per benign group,
      * the remaining features form a common background pool.

    Malware draws its family pattern, the shared pool, and a down-scaled
    background. Benign samples belong to one of ``benign_group_count``
    groups (frameworks / library stacks): they draw that group's pattern,
    the background, and a little shared-pool noise so the classes overlap.
    Both classes land near ``mean_active`` active features. Group shares
    decay with rank, so benign-feature rankings have a meaningful head, and
    the class structure is heterogeneous on both sides, as in real corpora.

    ``pattern_overlap`` moves a fraction of each family's pattern draws into
    the shared pool, which makes families generic and hard to separate from
    the remaining malware (the selective attack's failure mode).
    """

    dim: int = 1000
    benign_count: int = 10000
    family_counts: tuple[int, ...] = field(
        default=(30, 34, 38, 42, 46, 50, 54, 58, 62, 66,
                 33, 37, 41, 45, 49, 53, 57, 61, 65, 79)
    )
    family_pattern_size: int = 9
    pattern_on_prob: float = 0.8
    shared_pool_size: int = 60
    shared_on_prob: float = 0.25
    benign_group_count: int = 40
    benign_pattern_size: int = 8
    benign_pattern_on_prob: float = 0.85
    benign_group_skew: float = 0.9
    background_on_prob: float = 40.0 / 440.0
    background_skew: float = 0.5
    malware_background_scale: float = 0.65
    # probability that a malware sample embeds a random benign group's
    # pattern (repackaged goodware); keeps benign evidence from being a
    # free pass and forces the classifier to weight malicious evidence up
    malware_repackaged_prob: float = 0.15
    # benign samples pick up shared-pool features at this rate; the class
    # overlap keeps borderline benign samples in play during training, as in
    # real corpora (clean models are not perfect there either)
    benign_shared_noise: float = 0.08
    mean_active: float = 50.0
    pattern_overlap: float = 0.0
    seed: int = 0

    @property
    def n_families(self) -> int:
        return len(self.family_counts)

    @property
    def pattern_block_end(self) -> int:
        return self.n_families * self.family_pattern_size

    @property
    def shared_pool_end(self) -> int:
        return self.pattern_block_end + self.shared_pool_size

    @property
    def benign_pattern_end(self) -> int:
        return self.shared_pool_end + self.benign_group_count * self.benign_pattern_size

    def family_name(self, f: int) -> str:
        return f"fam{f:02d}"

    def family_pattern(self, f: int) -> np.ndarray:
        start = f * self.family_pattern_size
        return np.arange(start, start + self.family_pattern_size)

    def benign_group_pattern(self, g: int) -> np.ndarray:
        start = self.shared_pool_end + g * self.benign_pattern_size
        return np.arange(start, start + self.benign_pattern_size)

    def benign_group_shares(self) -> np.ndarray:
        ranks = np.arange(self.benign_group_count, dtype=np.float64)
        weights = 1.0 / (ranks + 5.0) ** self.benign_group_skew
        return weights / weights.sum()

    def background_probs(self) -> np.ndarray:
        """Per-feature on-probabilities for the common background pool."""
        n_bg = self.dim - self.benign_pattern_end
        if n_bg <= 0:
            raise ConfigError("pattern blocks exceed the dimension")
        ranks = np.arange(n_bg, dtype=np.float64)
        weights = 1.0 / (ranks + 10.0) ** self.background_skew
        probs = weights * (self.background_on_prob * n_bg / weights.sum())
        # cap and redistribute so the expected count stays on target
        for _ in range(8):
            over = probs > 0.95
            if not over.any():
                break
            excess = (probs[over] - 0.95).sum()
            probs[over] = 0.95
            room = ~over
            probs[room] += excess * weights[room] / weights[room].sum()
        return probs

    def expected_active(self) -> tuple[float, float]:
        """(benign, malware) expected active-feature counts."""
        bg = self.background_probs().sum()
        fam = self.family_pattern_size * self.pattern_on_prob
        shared = self.shared_pool_size * self.shared_on_prob
        noise = self.shared_pool_size * self.benign_shared_noise
        group = self.benign_pattern_size * self.benign_pattern_on_prob
        repack = self.malware_repackaged_prob * group
        return (
            bg + noise + group,
            bg * self.malware_background_scale + fam + shared + repack,
        )


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic family-structured corpus for the given spec."""
    if spec.benign_pattern_end >= spec.dim:
        raise ConfigError("pattern blocks must leave room for background features")
    exp_benign, exp_mal = spec.expected_active()
    for name, value in (("benign", exp_benign), ("malware", exp_mal)):
        if abs(value - spec.mean_active) > 0.20 * spec.mean_active:
            raise ConfigError(
                f"expected {name} active count {value:.1f} deviates more than "
                f"20% from configured mean {spec.mean_active}"
            )

    rng = np.random.default_rng(spec.seed)
    bg_probs = spec.background_probs()
    bg_offset = spec.benign_pattern_end
    samples: list[LabeledSample] = []

    def draw_background(n: int, scale: float) -> list[np.ndarray]:
        probs = np.clip(bg_probs * scale, 0.0, 1.0)
        rows: list[np.ndarray] = []
        chunk = 2048
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            hits = rng.random((stop - start, probs.size)) < probs
            for r in range(stop - start):
                rows.append(np.flatnonzero(hits[r]) + bg_offset)
        return rows

    shared_lo, shared_hi = spec.pattern_block_end, spec.shared_pool_end
    shared_range = np.arange(shared_lo, shared_hi)
    groups = rng.choice(
        spec.benign_group_count, size=spec.benign_count, p=spec.benign_group_shares()
    )
    for g, bg in zip(groups, draw_background(spec.benign_count, 1.0)):
        pattern = spec.benign_group_pattern(int(g))
        pat_on = pattern[rng.random(pattern.size) < spec.benign_pattern_on_prob]
        parts = [bg, pat_on]
        if spec.benign_shared_noise > 0.0:
            parts.append(
                shared_range[rng.random(spec.shared_pool_size) < spec.benign_shared_noise]
            )
        active = np.unique(np.concatenate(parts))
        samples.append(
            LabeledSample(FeatureVector(spec.dim, tuple(active.tolist())), Label.BENIGN)
        )
    group_shares = spec.benign_group_shares()
    for f, count in enumerate(spec.family_counts):
        pattern = spec.family_pattern(f)
        name = spec.family_name(f)
        backgrounds = draw_background(count, spec.malware_background_scale)
        for bg in backgrounds:
            pat_on = pattern[rng.random(pattern.size) < spec.pattern_on_prob]
            if spec.pattern_overlap > 0.0 and pat_on.size:
                move = rng.random(pat_on.size) < spec.pattern_overlap
                moved = rng.integers(shared_lo, shared_hi, size=int(move.sum()))
                pat_on = np.concatenate([pat_on[~move], moved])
            shared_on = shared_range[
                rng.random(spec.shared_pool_size) < spec.shared_on_prob
            ]
            parts = [bg, pat_on, shared_on]
            if rng.random() < spec.malware_repackaged_prob:
                host = spec.benign_group_pattern(
                    int(rng.choice(spec.benign_group_count, p=group_shares))
                )
                parts.append(host[rng.random(host.size) < spec.benign_pattern_on_prob])
            active = np.unique(np.concatenate(parts))
            samples.append(
                LabeledSample(
                    FeatureVector(spec.dim, tuple(active.tolist())),
                    Label.MALICIOUS,
                    family=name,
                )
            )
    return Dataset(spec.dim, samples)
