"""Portable seeded randomness.

Every random draw in the package goes through a Philox counter-based bit
generator, whose stream is specified bit-for-bit and does not depend on
the platform. Gaussian variates are produced with Box-Muller from explicitly
ordered uniform pairs instead of numpy's ziggurat sampler, so a seed pins
the exact floating-point output.
"""

import numpy as np


def make_rng(seed):
    """Return a ``numpy.random.Generator`` backed by Philox for ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed)))


def uniform_open(rng, size):
    """Uniforms on the open interval (0, 1)."""
    u = rng.random(size)
    # random() is [0, 1); reflect so log() below never sees 0.
    return 1.0 - u


def standard_normal(rng, size):
    """Standard normal draws via Box-Muller.

    Uniforms are consumed in pairs (u1, u2) in row-major order; each pair
    yields the cosine branch first and the sine branch second.
    """
    shape = (size,) if np.isscalar(size) else tuple(size)
    total = int(np.prod(shape)) if shape else 1
    pairs = (total + 1) // 2
    u = uniform_open(rng, 2 * pairs).reshape(pairs, 2)
    radius = np.sqrt(-2.0 * np.log(u[:, 0]))
    angle = 2.0 * np.pi * u[:, 1]
    z = np.empty((pairs, 2))
    z[:, 0] = radius * np.cos(angle)
    z[:, 1] = radius * np.sin(angle)
    return z.reshape(-1)[:total].reshape(shape)


def spawn_seed(seed, *keys):
    """Derive a deterministic child seed from ``seed`` and integer keys."""
    seq = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
