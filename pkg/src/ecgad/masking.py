"""Mask construction: scattered global masks, contiguous local masks, and
deterministic test-time partitions.

Masks are binary vectors where 1 = kept and 0 = masked; masked values are set
to zero when applied. Training masks are seed-deterministic random draws;
test-time scoring uses a stride-interleaved partition so every signal point
is restored from a masked state in exactly one pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

GLOBAL_SCATTERED = "global_scattered"
LOCAL_CONTIGUOUS = "local_contiguous"
PARTITION = "partition"


@dataclass
class MaskConfig:
    global_ratio: float = 0.30
    global_regions: int = 8
    local_ratio: float = 0.25
    test_partitions: int = 4
    test_block: int = 32  # contiguous run length of the scoring partition masks


@dataclass
class MaskSpec:
    mask: np.ndarray  # uint8, 1 = kept, 0 = masked
    seed: int | None
    kind: str

    def apply(self, samples: np.ndarray) -> np.ndarray:
        return np.asarray(samples) * self.mask

    @property
    def masked_count(self) -> int:
        return int((self.mask == 0).sum())


def mask_global(length: int, ratio: float = 0.30, n_regions: int = 8, seed: int = 0) -> MaskSpec:
    """Scattered mask: ``n_regions`` disjoint masked runs totaling round(ratio*length)."""
    if not 0 <= ratio < 1:
        raise ConfigError(f"ratio must be in [0, 1), got {ratio}")
    if n_regions < 1:
        raise ConfigError(f"n_regions must be >= 1, got {n_regions}")
    total = int(round(ratio * length))
    mask = np.ones(length, dtype=np.uint8)
    if total == 0:
        return MaskSpec(mask=mask, seed=seed, kind=GLOBAL_SCATTERED)
    if total < n_regions:
        raise ConfigError(f"cannot split {total} masked samples into {n_regions} regions")
    # n_regions runs need at least n_regions - 1 separating kept samples
    free = length - total - (n_regions - 1)
    if free < 0:
        raise ConfigError(
            f"mask ratio {ratio} with {n_regions} regions does not fit in length {length}"
        )
    rng = np.random.default_rng(seed)
    run_lengths = np.full(n_regions, total // n_regions)
    run_lengths[: total % n_regions] += 1
    # uniform composition of the free kept samples into n_regions + 1 gaps
    cuts = np.sort(rng.choice(free + n_regions, size=n_regions, replace=False))
    gaps = np.diff(np.concatenate(([-1], cuts, [free + n_regions]))) - 1
    pos = gaps[0]
    for i, run in enumerate(run_lengths):
        mask[pos : pos + run] = 0
        pos += run + 1 + gaps[i + 1]  # +1 keeps adjacent runs disjoint
    return MaskSpec(mask=mask, seed=seed, kind=GLOBAL_SCATTERED)


def mask_local(length: int, ratio: float = 0.25, seed: int = 0) -> MaskSpec:
    """Contiguous mask: one masked run of length round(ratio*length), uniform start."""
    if not 0 <= ratio < 1:
        raise ConfigError(f"ratio must be in [0, 1), got {ratio}")
    mask = np.ones(length, dtype=np.uint8)
    run = int(round(ratio * length))
    if run > 0:
        rng = np.random.default_rng(seed)
        start = int(rng.integers(0, length - run + 1))
        mask[start : start + run] = 0
    return MaskSpec(mask=mask, seed=seed, kind=LOCAL_CONTIGUOUS)


def test_mask_partition(length: int, k: int = 4, block: int = 1) -> list[MaskSpec]:
    """K interleaved block masks whose masked sets partition every index exactly once.

    With block=1 this is plain stride interleaving. Larger blocks mask
    contiguous runs (block j goes to pass j mod K), which matches the run
    lengths seen in training masks, so test-time restoration difficulty is
    genuine rather than single-sample interpolation.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if block < 1:
        raise ConfigError(f"block must be >= 1, got {block}")
    n_blocks = (length + block - 1) // block
    if k > n_blocks:
        raise ConfigError(f"k={k} exceeds {n_blocks} blocks of size {block} in length {length}")
    specs = []
    block_of = np.arange(length) // block
    for j in range(k):
        mask = (block_of % k != j).astype(np.uint8)
        specs.append(MaskSpec(mask=mask, seed=None, kind=PARTITION))
    return specs
