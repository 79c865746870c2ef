"""Seeded random streams, keyed by (seed, purpose).

Every stochastic component draws from its own named stream so that, e.g.,
changing how a problem is generated can never perturb the coin sequence of
an optimizer run with the same seed.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["rng_for", "haar_orthogonal"]


def _purpose_key(purpose: str) -> int:
    # sha256 keeps the key stable across platforms and Python versions
    # (unlike hash()), so seeded runs are reproducible everywhere.
    return int.from_bytes(hashlib.sha256(purpose.encode("utf-8")).digest()[:8], "big")


def rng_for(seed: int, purpose: str) -> np.random.Generator:
    """Return a Generator for the stream named `purpose` under `seed`."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _purpose_key(purpose)]))


def haar_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a d x d orthogonal matrix from the Haar distribution."""
    m = rng.standard_normal((d, d))
    q, r = np.linalg.qr(m)
    # Fix the signs so the distribution is exactly Haar rather than
    # biased by LAPACK's sign convention.
    return q * np.sign(np.diag(r))
