"""Estimator-style facade over the optimization engine.

``PromptOptimizer`` follows the scikit-learn parameter contract
(constructor-only hyperparameters, ``get_params``/``set_params``,
``fit`` returning self, trailing-underscore fitted attributes) so it
composes with ecosystem tooling such as ``sklearn.base.clone`` without
this package depending on scikit-learn itself.
"""

from __future__ import annotations

import inspect
from typing import Sequence

from .backends.base import Backend, GenerationRequest
from .backends.synthetic import SyntheticBackend, SyntheticWorldConfig, make_synthetic_dataset
from .domain import (
    RunConfig,
    TaskDataset,
    TaskItem,
    Taxonomy,
    default_taxonomy,
    load_seed_prompt,
    validate_config,
)
from .errors import NotFittedError
from .evaluation import exact_match, extract_final_answer
from .optimizer import RunResult, run


def check_is_fitted(estimator, attribute: str = "result_") -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first")


class PromptOptimizer:
    """Optimize a prompt against a task dataset.

    Hyperparameters mirror the run configuration; ``fit`` runs the full
    optimization and exposes the outcome through fitted attributes
    (``best_prompt_``, ``best_score_``, ``pool_``, ``trace_``,
    ``ledger_``, ``outcomes_``).
    """

    def __init__(
        self,
        K: int = 3,
        p: float = 0.2,
        epsilon: float = 0.1,
        b: int = 8,
        budget: int = 500,
        rng_seed: int = 0,
        mode: str = "vista",
        max_parallel: int = 4,
        restart_lookahead_cap: int = 5,
        backend: Backend | None = None,
        taxonomy: Taxonomy | None = None,
        world: SyntheticWorldConfig | None = None,
        out_dir: str | None = None,
    ):
        self.K = K
        self.p = p
        self.epsilon = epsilon
        self.b = b
        self.budget = budget
        self.rng_seed = rng_seed
        self.mode = mode
        self.max_parallel = max_parallel
        self.restart_lookahead_cap = restart_lookahead_cap
        self.backend = backend
        self.taxonomy = taxonomy
        self.world = world
        self.out_dir = out_dir

    # ------------------------------------------------- parameter contract

    @classmethod
    def _param_names(cls) -> list[str]:
        signature = inspect.signature(cls.__init__)
        return [name for name in signature.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "PromptOptimizer":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}")
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        shown = ", ".join(f"{n}={getattr(self, n)!r}"
                          for n in ("K", "p", "epsilon", "b", "budget", "rng_seed", "mode"))
        return f"{type(self).__name__}({shown})"

    # -------------------------------------------------------------- fit

    def _resolve(self, dataset: TaskDataset | None):
        dataset = dataset if dataset is not None else make_synthetic_dataset()
        taxonomy = self.taxonomy if self.taxonomy is not None else default_taxonomy()
        config = RunConfig(
            K=self.K, p=self.p, epsilon=self.epsilon, b=self.b, budget=self.budget,
            rng_seed=self.rng_seed, mode=self.mode, max_parallel=self.max_parallel,
            restart_lookahead_cap=self.restart_lookahead_cap)
        backend = self.backend
        if backend is None:
            world = self.world if self.world is not None else SyntheticWorldConfig()
            backend = SyntheticBackend(world, dataset, taxonomy, self.rng_seed)
        return config, dataset, taxonomy, backend

    def fit(self, dataset: TaskDataset | None = None,
            seed_prompt: str | None = None) -> "PromptOptimizer":
        """Run the optimization.  With no arguments, optimizes the shipped
        defective seed against the default synthetic world."""
        config, dataset, taxonomy, backend = self._resolve(dataset)
        validate_config(config, dataset)
        if seed_prompt is None:
            seed_prompt = load_seed_prompt("defective")
        result: RunResult = run(
            config=config,
            dataset=dataset,
            taxonomy=taxonomy,
            backend=backend,
            seed_prompt=seed_prompt,
            out_dir=self.out_dir,
        )
        self.result_ = result
        self.backend_ = backend
        self.best_prompt_ = result.best.text
        self.best_score_ = result.best.val_accuracy
        self.pool_ = result.pool
        self.trace_ = result.trace
        self.ledger_ = result.ledger
        self.outcomes_ = result.outcomes
        return self

    # ---------------------------------------------------------- predict

    def predict(self, questions: Sequence[str]) -> list[str | None]:
        """Answer questions with the optimized prompt; None where the
        output does not parse."""
        check_is_fitted(self)
        answers: list[str | None] = []
        for question in questions:
            raw = self.backend_.generate(GenerationRequest(
                role="base",
                messages=(("system", self.best_prompt_), ("user", question)),
            ))
            extracted, _err = extract_final_answer(raw)
            answers.append(extracted)
        return answers

    def score(self, items: Sequence[TaskItem]) -> float:
        """Mean exact-match accuracy of the optimized prompt on items."""
        check_is_fitted(self)
        predictions = self.predict([item.question for item in items])
        total = sum(
            exact_match(pred, item.gold_answer) if pred is not None else 0
            for pred, item in zip(predictions, items))
        return total / len(items) if items else 0.0
