"""Named, counter-based random streams.

Every random decision (shape sampling, augmentation, batch shuffling, ...)
draws from its own stream keyed by the master seed plus a label path such
as ``("augment", epoch, cloud_uid)``.  Streams are independent, stable
across runs, and insensitive to how many draws other streams make, which
is what makes experiment manifests bit-reproducible.
"""

import hashlib

import numpy as np


def stream(seed: int, *labels) -> np.random.Generator:
    """Generator for the stream named (seed, *labels).

    Labels may be ints or strings; they are hashed into a Philox key, so
    any two distinct label paths give statistically independent streams.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode())
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode())
    key = int.from_bytes(h.digest(), "little")
    return np.random.Generator(np.random.Philox(key=key))
