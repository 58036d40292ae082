"""Problem-space trigger realization through a gadget database.

Each feature may have candidate gadgets (injectable code slices); inserting
a gadget induces its primary feature plus unavoidable side-effect features.
Realizing a feature-space trigger greedily picks, per trigger feature, the
candidate with the fewest side effects, and returns the union of the base
trigger and all accumulated side effects. Harvesting real gadget databases
is out of scope; a synthetic generator with the same file format stands in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class GadgetRecord:
    gadget_id: str
    primary_feature: int
    side_effects: frozenset[int]

    def __post_init__(self) -> None:
        if self.primary_feature in self.side_effects:
            raise DataError(
                f"gadget {self.gadget_id}: primary feature listed as side effect"
            )


class GadgetDatabase:
    """Immutable feature -> candidate gadgets mapping over dimension q."""

    def __init__(self, dim: int, records: Sequence[GadgetRecord]):
        self.dim = dim
        by_feature: dict[int, list[GadgetRecord]] = {}
        for rec in records:
            if not 0 <= rec.primary_feature < dim:
                raise DataError(
                    f"gadget {rec.gadget_id}: primary feature "
                    f"{rec.primary_feature} out of range for dim {dim}"
                )
            if rec.side_effects and max(rec.side_effects) >= dim:
                raise DataError(
                    f"gadget {rec.gadget_id}: side-effect feature out of range"
                )
            by_feature.setdefault(rec.primary_feature, []).append(rec)
        self.by_feature = by_feature

    def candidates(self, feature: int) -> list[GadgetRecord]:
        return self.by_feature.get(feature, [])

    def __len__(self) -> int:
        return sum(len(v) for v in self.by_feature.values())


@dataclass(frozen=True)
class RealizedTrigger:
    """Base mask, chosen gadgets, side-effect set, and final problem-space mask."""

    base: tuple[int, ...]
    gadgets: tuple[GadgetRecord, ...]
    side_effects: tuple[int, ...]
    final: tuple[int, ...]


def search_gadget(feature: int, db: GadgetDatabase) -> GadgetRecord:
    """Candidate with the fewest side effects; ties go to the smallest id."""
    candidates = db.candidates(feature)
    if not candidates:
        raise DataError(f"feature {feature} has no gadget candidates")
    return min(candidates, key=lambda g: (len(g.side_effects), g.gadget_id))


def realize_trigger(m_binary: Sequence[int], db: GadgetDatabase) -> RealizedTrigger:
    base = sorted(int(i) for i in set(m_binary))
    missing = [j for j in base if not db.candidates(j)]
    if missing:
        raise DataError(f"unrealizable trigger features (no gadgets): {missing}")
    chosen = [search_gadget(j, db) for j in base]
    eta: set[int] = set()
    for g in chosen:
        eta |= g.side_effects
    eta -= set(base)
    final = sorted(set(base) | eta)
    return RealizedTrigger(tuple(base), tuple(chosen), tuple(sorted(eta)), tuple(final))


def realizable_support(db: GadgetDatabase) -> np.ndarray:
    """All features with at least one gadget candidate."""
    return np.array(sorted(db.by_feature), dtype=np.int64)


def generate_synthetic_gadget_db(
    dim: int,
    coverage: float,
    max_side_effects: int = 3,
    candidates_per_feature: int = 3,
    seed: int = 0,
) -> GadgetDatabase:
    """Deterministic stand-in database.

    A ``coverage`` fraction of features gets 1..candidates_per_feature
    gadgets; side-effect sizes are uniform in [0, max_side_effects] and the
    side-effect features themselves are drawn from the realizable set.
    """
    if not 0.0 < coverage <= 1.0:
        raise ConfigError("coverage must be in (0, 1]")
    rng = np.random.default_rng(seed)
    n_realizable = max(1, int(round(dim * coverage)))
    realizable = np.sort(rng.choice(dim, size=n_realizable, replace=False))
    records = []
    for j in realizable:
        n_cands = int(rng.integers(1, candidates_per_feature + 1))
        for c in range(n_cands):
            n_side = int(rng.integers(0, max_side_effects + 1))
            pool = realizable[realizable != j]
            side = (
                frozenset(int(s) for s in rng.choice(pool, size=n_side, replace=False))
                if n_side > 0 and pool.size
                else frozenset()
            )
            records.append(GadgetRecord(f"g{j:05d}_{c}", int(j), side))
    return GadgetDatabase(dim, records)


def save_gadget_db(db: GadgetDatabase, path: str | Path) -> None:
    with open(path, "w") as fh:
        for feature in sorted(db.by_feature):
            for rec in db.by_feature[feature]:
                fh.write(
                    json.dumps(
                        {
                            "gadget_id": rec.gadget_id,
                            "primary_feature": rec.primary_feature,
                            "side_effects": sorted(rec.side_effects),
                        }
                    )
                )
                fh.write("\n")


def load_gadget_db(path: str | Path, dim: int) -> GadgetDatabase:
    path = Path(path)
    if not path.exists():
        raise DataError(f"gadget database file not found: {path}")
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(
                    GadgetRecord(
                        str(obj["gadget_id"]),
                        int(obj["primary_feature"]),
                        frozenset(int(s) for s in obj["side_effects"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}: malformed gadget at line {lineno}: {exc}")
    return GadgetDatabase(dim, records)


def save_realized_trigger(rt: RealizedTrigger, path: str | Path) -> None:
    obj = {
        "base": list(rt.base),
        "gadgets": [g.gadget_id for g in rt.gadgets],
        "side_effects": list(rt.side_effects),
        "final": list(rt.final),
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)
