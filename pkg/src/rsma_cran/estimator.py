"""
Estimator-style front end to the allocator.

``RSMAAllocator`` follows the scikit-learn conventions where they make sense
for an optimizer: hyperparameters live in ``__init__`` and round-trip through
``get_params``/``set_params``, ``fit`` consumes a :class:`Scenario` and
stores results in trailing-underscore attributes, and ``score`` is higher
for better allocations (the negated objective).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from . import conic, qt
from .baselines import SCHEMES, SchemeSpec, build_structure
from .metrics import PrecoderSet, energy_efficiency_phi
from .netmodel import ChannelState, Scenario


def check_scenario(scenario) -> Scenario:
    """Validate a scenario before it reaches the optimizer."""
    if not isinstance(scenario, Scenario):
        raise TypeError(f"expected a Scenario, got {type(scenario).__name__}")
    cfg, h = scenario.config, scenario.channel.h
    expected = (cfg.num_bs, cfg.num_users, cfg.antennas_per_bs)
    if h.shape != expected:
        raise ValueError(f"channel shape {h.shape} does not match the config {expected}")
    if not np.all(np.isfinite(h)):
        raise ValueError("channel contains non-finite entries")
    if not (np.isfinite(scenario.noise_power) and scenario.noise_power > 0):
        raise ValueError("noise power must be positive and finite")
    return scenario


def check_precoders(w: PrecoderSet, channel: ChannelState) -> PrecoderSet:
    """Check that a warm start has the (K, B*L) layout of ``channel``."""
    shape = (channel.num_users, channel.num_bs * channel.antennas)
    for name, arr in (("private", w.private), ("common", w.common)):
        if arr.shape != shape:
            raise ValueError(f"{name} precoders have shape {arr.shape}, expected {shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} precoders contain non-finite entries")
    return w


class RSMAAllocator(BaseEstimator):
    """Joint rate-gap and power minimizer for one C-RAN scenario.

    Parameters
    ----------
    scheme : {"rsma", "tin", "scm"}
    alpha : float or None
        Rate-gap weight; ``None`` keeps the scenario's value.
    tol, max_iter : outer-loop stopping rule.
    init : {"mrt-demand", "mrt", "random"}
    private_cluster_size, common_cluster_size, decode_set_size : int or None
        Structure sizes; ``None`` keeps the scenario's values.
    random_state : int
        Seed for random initialization.
    """

    def __init__(self, scheme="rsma", alpha=None, tol=1e-4, max_iter=50, init="mrt-demand",
                 private_cluster_size=None, common_cluster_size=None, decode_set_size=None,
                 random_state=0):
        self.scheme = scheme
        self.alpha = alpha
        self.tol = tol
        self.max_iter = max_iter
        self.init = init
        self.private_cluster_size = private_cluster_size
        self.common_cluster_size = common_cluster_size
        self.decode_set_size = decode_set_size
        self.random_state = random_state

    def _validate_params(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be at least 1")
        if self.init not in qt.INIT_MODES:
            raise ValueError(f"init must be one of {qt.INIT_MODES}")

    def _effective_config(self, config):
        overrides = {}
        for name in ("alpha", "private_cluster_size", "common_cluster_size", "decode_set_size"):
            value = getattr(self, name)
            if value is not None:
                overrides[name] = value
        return config.replace(**overrides) if overrides else config

    def fit(self, scenario: Scenario, y=None, *, initial: PrecoderSet | None = None):
        """Run the optimizer on ``scenario``; ``y`` is ignored."""
        self._validate_params()
        scenario = check_scenario(scenario)
        if initial is not None:
            check_precoders(initial, scenario.channel)
        config = self._effective_config(scenario.config)
        structure = build_structure(SchemeSpec.from_config(self.scheme, config), scenario.channel, config)
        opts = qt.QTOptions(tol=self.tol, max_iter=int(self.max_iter), init=self.init,
                            init_seed=int(self.random_state), solver=conic.SolverSettings())
        sol = qt.run(config, scenario.channel, structure, scenario.noise_power, opts, initial=initial)

        self.config_ = config
        self.structure_ = structure
        self.solution_ = sol
        self.precoders_ = sol.precoders
        self.rates_ = sol.rates.total
        self.n_iter_ = sol.iterations
        self.objective_ = sol.psi
        self.feasibility_ = sol.feasibility
        return self

    def predict(self, scenario: Scenario | None = None) -> np.ndarray:
        """Per-user delivered rates (Mbps) of the fitted allocation."""
        check_is_fitted(self, "solution_")
        return self.rates_.copy()

    def fit_predict(self, scenario: Scenario, y=None) -> np.ndarray:
        return self.fit(scenario).predict()

    def score(self, scenario: Scenario | None = None, y=None) -> float:
        """Negated objective, so larger is better."""
        check_is_fitted(self, "solution_")
        return -float(self.objective_)

    def energy_efficiency(self) -> float:
        check_is_fitted(self, "solution_")
        return energy_efficiency_phi(self.precoders_, self.solution_.rates, self.config_)


__all__ = ["RSMAAllocator", "check_scenario", "check_precoders", "NotFittedError"]
