"""
Seeded, splittable random streams.

Every random draw in the package goes through `stream_generator`. A stream is
identified by `(seed, domain, stream)`; streams never overlap, so replicate
`i` always sees the same noise no matter which worker runs it or in what
order.
"""

from enum import IntEnum

import numpy as np


class StreamDomain(IntEnum):
    """
    - NOISE: Additive Gaussian noise, one stream per replicate.
    - ORIENTATION: The Gaussian matrix singular subspaces are drawn from.
    - MOMENT_CHECK: Wishart and trace moment Monte-Carlo checks.
    """

    NOISE = 0
    ORIENTATION = 1
    MOMENT_CHECK = 2


def stream_generator(seed: int, domain: StreamDomain, stream: int) -> np.random.Generator:
    """
    Philox generator keyed by `seed` with `(domain, stream)` as spawn key.
    Philox is counter based, so each key gives an independent substream.
    """
    seed_sequence = np.random.SeedSequence(
        entropy=seed, spawn_key=(int(domain), stream)
    )
    return np.random.Generator(np.random.Philox(seed_sequence))
