"""Small generated event streams for capacity and ablation experiments.

Two generators: a fully deterministic cyclic stream where the correct
object is a pure function of (subject, relation) and is visible in the
subject's own history (a copy task any adequate model should drive to
near-perfect MRR), and a noisy stream where a globally frequent trap
entity replaces the patterned answer at a fixed rate, giving plain
cross-entropy something to overfit.
"""

import os

import numpy as np

from .data import Quadruple, write_quadruples
from .errors import ConfigurationError


def cyclic_tkg(num_entities=5, num_relations=2, num_timestamps=60):
    """Every subject emits, at every timestamp, one fact per relation with
    object (s + 1 + r) mod num_entities."""
    if num_entities < 3 or num_relations < 1 or num_timestamps < 3:
        raise ConfigurationError("cyclic stream needs >= 3 entities/timestamps")
    quads = []
    for t in range(num_timestamps):
        for s in range(num_entities):
            for r in range(num_relations):
                quads.append(Quadruple(s, r, (s + 1 + r) % num_entities, t))
    return quads


def shift_tkg(num_entities=10, num_relations=2, num_timestamps=120):
    """Modular drift stream: object (s + r + t) mod num_entities.

    Any single history fact determines the answer together with its time
    gap (gold = history object + gap, mod E), so the pattern survives
    aggressive subsampling, while per-(s, r) object frequencies stay flat
    and give a frequency baseline nothing to exploit.
    """
    if num_entities < 3 or num_relations < 1 or num_timestamps < 3:
        raise ConfigurationError("shift stream needs >= 3 entities/timestamps")
    return [
        Quadruple(s, r, (s + r + t) % num_entities, t)
        for t in range(num_timestamps)
        for s in range(num_entities)
        for r in range(num_relations)
    ]


def noisy_tkg(num_entities=8, num_relations=2, num_timestamps=80, seed=0,
              trap_entity=0, trap_rate=0.3):
    """Patterned stream with a frequency trap.

    Relation 0 alternates each subject between two subject-specific
    objects, but with probability trap_rate the object is replaced by the
    globally shared trap entity. Relation 1 is uniform noise. The trap
    entity ends up dominating the empirical object distribution.
    """
    if not 0.0 <= trap_rate < 1.0:
        raise ConfigurationError(f"trap_rate must be in [0, 1), got {trap_rate}")
    rng = np.random.default_rng(seed)
    quads = []
    for t in range(num_timestamps):
        for s in range(num_entities):
            a = (s + 1) % num_entities
            b = (s + 3) % num_entities
            o = a if t % 2 == 0 else b
            if rng.random() < trap_rate:
                o = trap_entity
            quads.append(Quadruple(s, 0, o, t))
            if num_relations > 1:
                quads.append(
                    Quadruple(s, 1, int(rng.integers(num_entities)), t)
                )
    return quads


def split_chronological(quads, ratios=(0.8, 0.1, 0.1)):
    """Cut a time-sorted stream at timestamp boundaries into train/valid/test."""
    if abs(1.0 - float(np.sum(ratios))) > 1e-9 or len(ratios) != 3:
        raise ConfigurationError(f"ratios must be 3 values summing to 1, got {ratios}")
    times = sorted({q.t for q in quads})
    n = len(times)
    cut1 = times[min(n - 1, max(1, int(round(n * ratios[0]))))]
    cut2 = times[min(n - 1, max(2, int(round(n * (ratios[0] + ratios[1])))))]
    train = [q for q in quads if q.t < cut1]
    valid = [q for q in quads if cut1 <= q.t < cut2]
    test = [q for q in quads if q.t >= cut2]
    return train, valid, test


def write_splits(dirpath, quads, time_granularity=1, ratios=(0.8, 0.1, 0.1)):
    """Materialize a generated stream as train/valid/test files."""
    os.makedirs(dirpath, exist_ok=True)
    train, valid, test = split_chronological(quads, ratios)
    write_quadruples(os.path.join(dirpath, "train.txt"), train, time_granularity)
    write_quadruples(os.path.join(dirpath, "valid.txt"), valid, time_granularity)
    write_quadruples(os.path.join(dirpath, "test.txt"), test, time_granularity)
    return train, valid, test
