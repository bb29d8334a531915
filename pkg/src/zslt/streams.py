"""Named random substreams derived from one root seed."""

import numpy as np

STREAMS = {"init": 0, "dropout": 1, "shuffle": 2, "synth": 3, "gradcheck": 4}


def stream(seed: int, name: str) -> np.random.Generator:
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}; known: {sorted(STREAMS)}")
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name],)))
