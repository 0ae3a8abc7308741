"""
Common interface for everything that assigns amplitudes to configurations.

Samplers, estimators and the exact oracle only talk to this interface:
batched complex log amplitudes, an optional incremental cache for
connected configurations, and a flat parameter vector with
log-derivatives for gradient-based optimization.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from gpslab.core.exceptions import UnsupportedOperationError


@dataclass
class WavefunctionCache:
    """Cached configuration and its log amplitude; models may attach extra state."""

    config: np.ndarray
    log_value: complex
    state: Any = None
    moves: int = 0
    extra: dict = field(default_factory=dict)


class Wavefunction(ABC):
    local_dim: int
    n_sites: int
    real_parameters: bool = False

    @abstractmethod
    def log_psi(self, configs: np.ndarray) -> np.ndarray:
        """Complex log amplitudes of an (N, L) batch; any branch of the imaginary part."""

    def log_psi_one(self, x: np.ndarray) -> complex:
        return complex(self.log_psi(np.asarray(x)[None, :])[0])

    def amplitudes(self, configs: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(self.log_psi(np.atleast_2d(configs)))

    # ------------------------------------------------------------------
    # Incremental evaluation
    # ------------------------------------------------------------------

    def init_cache(self, x: np.ndarray) -> WavefunctionCache:
        x = np.array(x, copy=True)
        return WavefunctionCache(config=x, log_value=self.log_psi_one(x))

    def fast_update(self, cache: WavefunctionCache, changes: Sequence[tuple[int, int]]) -> WavefunctionCache:
        """Cache for the configuration with `changes` = [(site, new local state), ...] applied."""
        x = cache.config.copy()
        for site, value in changes:
            x[site] = value
        return self.init_cache(x)

    def fast_update_many(self, cache: WavefunctionCache, targets: np.ndarray) -> np.ndarray:
        """Log amplitudes of connected targets (N, L) given the cache of their source."""
        return self.log_psi(np.atleast_2d(targets))

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    @property
    def n_parameters(self) -> int:
        return len(self.parameters)

    @property
    def parameters(self) -> np.ndarray:
        raise UnsupportedOperationError(f"{type(self).__name__} has no variational parameters")

    def with_parameters(self, parameters: np.ndarray) -> "Wavefunction":
        raise UnsupportedOperationError(f"{type(self).__name__} has no variational parameters")

    def log_derivatives(self, configs: np.ndarray) -> np.ndarray:
        """(N, P) derivatives of ln Psi with respect to the flat parameter vector."""
        raise UnsupportedOperationError(f"{type(self).__name__} has no variational parameters")


def changed_sites(source: np.ndarray, target: np.ndarray) -> list[tuple[int, int]]:
    diff = np.flatnonzero(source != target)
    return [(int(i), int(target[i])) for i in diff]
