# bmalab/utils/rng.py

import numpy as np

POLICY_STREAM = 0
COVARIATE_STREAM = 1
OUTCOME_STREAM = 2

MAX_SEED = 2 ** 64


def stream(base_seed: int, rep_index: int, *key: int) -> np.random.Generator:
    """
    Independent Philox stream for (base_seed, replication, *key).

    Streams are addressed by key rather than drawn in sequence, so replication r
    gets the same variates whether it runs alone, in a pool, or after r - 1.
    """
    seq = np.random.SeedSequence(entropy=base_seed, spawn_key=(rep_index, *key))
    return np.random.Generator(np.random.Philox(seq))


def policy_stream(base_seed: int, rep_index: int) -> np.random.Generator:
    return stream(base_seed, rep_index, POLICY_STREAM)


def covariate_stream(base_seed: int, rep_index: int) -> np.random.Generator:
    return stream(base_seed, rep_index, COVARIATE_STREAM)


def outcome_stream(base_seed: int, rep_index: int, treatment: int, covariate: int) -> np.random.Generator:
    return stream(base_seed, rep_index, OUTCOME_STREAM, treatment, covariate)
