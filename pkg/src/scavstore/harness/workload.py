"""Synthetic checkpoint workloads: seeded version series with controlled
similarity between successive images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REGION = 1 << 20  # mutation granularity, aligned with the default chunk size


@dataclass(frozen=True)
class WorkloadSpec:
    image_size: int = 64 << 20
    versions: int = 5
    mutation_fraction: float = 0.0
    insert_bytes: int = 0
    checkpoint_interval: float = 0.0
    clients: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mutation_fraction <= 1.0:
            raise ValueError("mutation_fraction must be within [0, 1]")
        if self.image_size <= 0 or self.versions < 1:
            raise ValueError("need a positive image size and version count")


def gen_versions(spec: WorkloadSpec):
    """Yields spec.versions byte strings; deterministic for a given seed.

    Version 1 is uniform random. Each next version rewrites
    mutation_fraction of its 1 MB regions with fresh random bytes and then
    inserts insert_bytes at a random offset, so consecutive versions share
    exactly the untouched regions.
    """
    rng = np.random.default_rng(spec.seed)
    image = rng.integers(0, 256, spec.image_size, dtype=np.uint8)
    yield image.tobytes()
    for _ in range(spec.versions - 1):
        image = _next_version(image, spec, rng)
        yield image.tobytes()


def _next_version(image: np.ndarray, spec: WorkloadSpec, rng) -> np.ndarray:
    image = image.copy()
    regions = max(1, len(image) // REGION)
    mutate = round(regions * spec.mutation_fraction)
    if mutate:
        picks = rng.choice(regions, size=mutate, replace=False)
        for idx in sorted(picks):
            start = idx * REGION
            end = min(start + REGION, len(image))
            image[start:end] = rng.integers(0, 256, end - start, dtype=np.uint8)
    if spec.insert_bytes:
        offset = int(rng.integers(0, len(image) + 1))
        insert = rng.integers(0, 256, spec.insert_bytes, dtype=np.uint8)
        image = np.concatenate([image[:offset], insert, image[offset:]])
    return image
