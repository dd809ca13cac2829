"""Local explanations: plain fixed-n and the stabilized adaptive variant.

Both explainers sample a Gaussian neighborhood of the instance, weight rows
by the locality kernel, run the weighted LASSO path until k features are
active, and refit those features by weighted least squares on the original
scale.  The stabilized variant additionally gates every variable entry with
the CLT test from :mod:`slime.stability_testing`: if the top candidate's lead
over its competition could plausibly flip on regenerated data, the path is
abandoned, the sample grown to the recommended size (reusing existing rows
by default), and the walk restarted.  Once the requested budget ``n_max``
would be exceeded, one final pass runs untested and the result is marked
``capped``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .models import Model
from .sampling import (InstanceSpec, PerturbationDataset, build_dataset,
                       default_kernel_width, extend_dataset)
from .stability_testing import (TestDecision, bonferroni_entry_test,
                                entry_test, product_covariance)
from .weighted_lars import (DesignMatrix, EntryContext, PathState,
                            lars_lasso_path, refit_least_squares, standardize,
                            transform_response)

__all__ = ["ExplainerConfig", "Explanation", "lime_explain", "slime_explain",
           "run_with_reuse"]


@dataclass(frozen=True)
class ExplainerConfig:
    """Knobs shared by both explainers.

    ``n0`` is the starting (and, for the plain explainer, only) sample size;
    ``k`` the number of features to select; ``alpha`` the per-entry test
    level; ``n_max`` the sample budget; ``kernel_width`` the locality kernel
    width (None means the 0.75 * sqrt(p) default); ``multiple_testing``
    switches the entry gate from the top-two comparison to the summed
    pairwise comparison against every remaining candidate; ``growth_factor``
    is the fallback multiplier when a test is too hopeless to project a
    sample size; ``reuse_samples`` keeps already-queried rows when growing.
    """

    n0: int = 1000
    alpha: float = 0.05
    k: int = 5
    n_max: int = 10000
    kernel_width: float | None = None
    multiple_testing: bool = False
    growth_factor: float = 4.0
    seed: int = 0
    reuse_samples: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be at least 1")
        if self.n0 < self.k + 2:
            raise ValidationError(f"n0 must be at least k + 2 = {self.k + 2}")
        if not (0.0 < self.alpha < 0.5):
            raise ValidationError("alpha must lie strictly in (0, 0.5)")
        if self.n_max < self.n0:
            raise ValidationError("n_max must be at least n0")
        if self.kernel_width is not None and not self.kernel_width > 0:
            raise ValidationError("kernel_width must be positive")
        if self.growth_factor < 2.0:
            raise ValidationError("growth_factor must be at least 2")


@dataclass(frozen=True)
class Explanation:
    """Result of one explanation run.

    ``selected`` pairs each chosen feature, in selection order, with its
    refit coefficient.  ``test_trace`` holds every entry-test decision made
    along the way (empty for the plain explainer); ``capped`` records that
    the sample budget cut the adaptive loop short.
    """

    selected: tuple[tuple[str, float], ...]
    intercept: float
    final_n: int
    capped: bool
    test_trace: tuple[TestDecision, ...]
    seed: int

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.selected)


def _width(config: ExplainerConfig, p: int) -> float:
    return config.kernel_width if config.kernel_width is not None else default_kernel_width(p)


class _EntryGate:
    """Observer that tests each entry and remembers why it aborted."""

    def __init__(self, config: ExplainerConfig, n: int):
        self.config = config
        self.n = n
        self.decisions: list[TestDecision] = []
        self.failed: TestDecision | None = None

    def __call__(self, ctx: EntryContext) -> bool:
        if len(ctx.candidates) < 2:
            return True   # nothing to compete against: entry is forced
        residual = ctx.residual
        # The negation rule: a negatively correlated candidate is compared
        # through its sign-flipped column so every correlation is positive.
        top = ctx.candidates[0]
        top_col = self._signed_column(top)
        if self.config.multiple_testing:
            covs = []
            names = []
            for cand in ctx.candidates[1:]:
                covs.append(product_covariance(residual, top_col,
                                               self._signed_column(cand)))
                names.append((top.name, cand.name))
            decision = bonferroni_entry_test(
                covs, self.config.alpha, compared_names=names, step=ctx.step,
                growth_factor=self.config.growth_factor)
        else:
            runner_up = ctx.candidates[1]
            cov = product_covariance(residual, top_col,
                                     self._signed_column(runner_up))
            decision = entry_test(
                cov, self.config.alpha, compared=(top.name, runner_up.name),
                step=ctx.step, growth_factor=self.config.growth_factor)
        self.decisions.append(decision)
        if not decision.significant:
            self.failed = decision
            return False
        return True

    def _signed_column(self, candidate) -> np.ndarray:
        column = self._design.base.values[:, candidate.index]
        return -column if candidate.c_hat < 0 else column

    def bind(self, design) -> "_EntryGate":
        self._design = design
        return self


def _select_and_refit(dataset: PerturbationDataset, config: ExplainerConfig,
                      gate: _EntryGate | None) -> tuple[PathState, DesignMatrix]:
    design = DesignMatrix(values=dataset.X,
                          column_names=dataset.instance.feature_names)
    std = standardize(design, dataset.weights)
    response = transform_response(dataset.y, dataset.weights)
    max_active = min(config.k, std.base.n_cols, dataset.n - 1)
    observer = gate.bind(std) if gate is not None else None
    state = lars_lasso_path(std, response, max_active, observer=observer)
    return state, design


def _finish(state: PathState, design: DesignMatrix,
            dataset: PerturbationDataset, config: ExplainerConfig,
            capped: bool, trace: list[TestDecision]) -> Explanation:
    names = list(state.active_set)
    if names:
        coef, intercept = refit_least_squares(design, dataset.y,
                                              dataset.weights, names)
        selected = tuple((name, float(c)) for name, c in zip(names, coef))
    else:
        # Degenerate: nothing correlates with the response.  Report the
        # weighted mean as the intercept and no features.
        total = dataset.weights.sum()
        selected = ()
        intercept = float((dataset.weights @ dataset.y) / total)
    return Explanation(
        selected=selected,
        intercept=float(intercept),
        final_n=dataset.n,
        capped=capped,
        test_trace=tuple(trace),
        seed=dataset.seed,
    )


def lime_explain(model: Model, instance: InstanceSpec,
                 config: ExplainerConfig, n: int | None = None) -> Explanation:
    """Plain fixed-sample explanation: sample once, select, refit."""
    sample_n = config.n0 if n is None else n
    if sample_n < config.k + 2:
        raise ValidationError(f"n must be at least k + 2 = {config.k + 2}")
    _check_model(model, instance)
    dataset = build_dataset(model, instance, sample_n, config.seed,
                            _width(config, instance.n_features))
    state, design = _select_and_refit(dataset, config, gate=None)
    return _finish(state, design, dataset, config, capped=False, trace=[])


def slime_explain(model: Model, instance: InstanceSpec,
                  config: ExplainerConfig) -> Explanation:
    """Stabilized explanation with adaptive sample growth.

    Runs the gated path; on an undecided entry, grows the sample to the
    test's recommended size and restarts.  Growth reuses existing rows when
    ``config.reuse_samples`` (the default); otherwise each round draws a
    fresh dataset from a seed derived for that round.  When the
    recommendation would exceed ``n_max``, the sample is set to ``n_max``
    and one final ungated pass produces the (capped) answer.
    """
    _check_model(model, instance)
    width = _width(config, instance.n_features)
    dataset = build_dataset(model, instance, config.n0, config.seed, width)
    trace: list[TestDecision] = []
    capped = False
    round_index = 0
    while True:
        gate = None if capped else _EntryGate(config, dataset.n)
        state, design = _select_and_refit(dataset, config, gate)
        if gate is not None:
            trace.extend(gate.decisions)
        if capped or not state.aborted:
            return _finish(state, design, dataset, config, capped, trace)
        recommended = gate.failed.recommended_n
        if recommended > config.n_max:
            recommended = config.n_max
            capped = True
        round_index += 1
        if config.reuse_samples:
            if recommended > dataset.n:
                dataset = extend_dataset(model, dataset, recommended)
        else:
            round_seed = _derived_seed(config.seed, round_index)
            dataset = build_dataset(model, instance, recommended, round_seed, width)
        # If capped with recommended <= dataset.n (budget already reached),
        # the loop simply reruns ungated on the data it has.


def run_with_reuse(model: Model, previous: PerturbationDataset,
                   new_n: int) -> PerturbationDataset:
    """Public alias for growing a dataset in place; see
    :func:`slime.sampling.extend_dataset`."""
    return extend_dataset(model, previous, new_n)


def _derived_seed(base_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(0x5EED, index))
    return int(ss.generate_state(1, np.uint64)[0])


def _check_model(model: Model, instance: InstanceSpec) -> None:
    if getattr(model, "input_dim", instance.n_features) != instance.n_features:
        raise ValidationError(
            f"model expects {model.input_dim} features, instance has {instance.n_features}")
