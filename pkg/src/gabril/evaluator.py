"""Policy evaluation: closed-loop rollouts, intervention sensitivity, and
advantage-over-baseline reporting.

Intervention sensitivity operationalizes confounder robustness directly:
for a probe state we re-render the observation under every possible value
of the previous-action indicator (everything else, including noise, held
fixed) and measure how much the policy's action distribution moves. A
policy that ignores the confounder scores exactly zero. This metric is an
original operationalization; published results report robustness through
task scores only, and reports label it accordingly.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace, asdict
from itertools import combinations

import numpy as np

from . import envsim
from .envsim import EnvConfig, N_ACTIONS
from .errors import ConfigurationError, ContractViolation, UndefinedMetricError

VARIANTS = ("normal", "confounded-train", "confounded-shifted")


@dataclass
class ScoreReport:
    mean_return: float
    std: float
    episode_count: int
    variant: str
    seed: int
    returns: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class InterventionReport:
    """Pairwise total-variation distances under do(T=t) vs do(T=t'),
    per probe state and aggregated."""
    per_state: list           # list of lists of TV distances (6 pairs each)
    mean_tv: float
    max_tv: float
    n_probe_states: int
    seed: int
    note: str = ("intervention sensitivity is an original metric for the "
                 "distributional-robustness property, not a published one")

    def to_dict(self) -> dict:
        return asdict(self)


class ScriptedExpertPolicy:
    """The environment's optimal expert wrapped with the rollout interface."""

    def actions_from_states(self, states):
        return np.array([envsim.expert_action(s) for s in states])


class UniformRandomPolicy:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def greedy_actions(self, obs_batch):
        return self.rng.integers(N_ACTIONS, size=len(obs_batch))


def rollout(policy, env_config: EnvConfig, n_episodes: int, seed: int,
            variant: str = "normal") -> ScoreReport:
    """Closed-loop greedy evaluation, episodes run in lockstep.

    Variants: "normal" renders without the indicator patch;
    "confounded-train" shows the policy's own previous action;
    "confounded-shifted" drives the indicator with a random action each
    frame, severing the training-time correlation. Gaze is never consulted.
    """
    if n_episodes < 1:
        raise ContractViolation("n_episodes must be >= 1")
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    rcfg = replace(env_config.render, confounded=(variant != "normal"))
    shift_rng = np.random.default_rng([seed, 4242])
    states = [envsim.reset(int(s), env_config)
              for s in envsim.episode_seeds(seed, n_episodes)]
    returns = np.zeros(n_episodes)
    for _ in range(env_config.episode_length):
        if variant == "confounded-shifted":
            shown = [envsim.intervene(s, int(shift_rng.integers(N_ACTIONS)))
                     for s in states]
        else:
            shown = states
        if hasattr(policy, "actions_from_states"):
            actions = policy.actions_from_states(shown)
        else:
            obs = np.stack([envsim.render(s, rcfg) for s in shown])
            actions = policy.greedy_actions(obs)
        for i, s in enumerate(states):
            _, r, _ = envsim.step(s, int(actions[i]), env_config)
            returns[i] += r
    return ScoreReport(
        mean_return=float(returns.mean()),
        std=float(returns.std()),
        episode_count=n_episodes,
        variant=variant,
        seed=seed,
        returns=[float(r) for r in returns],
    )


def tv_distance(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def sample_probe_states(env_config: EnvConfig, n: int, seed: int):
    """Diverse world states reached by running the expert a random number of
    steps from fresh resets."""
    rng = np.random.default_rng([seed, 31337])
    states = []
    for s in envsim.episode_seeds(seed, n):
        state = envsim.reset(int(s), env_config)
        for _ in range(int(rng.integers(env_config.episode_length - 1))):
            envsim.step(state, envsim.expert_action(state), env_config)
        states.append(state)
    return states


def intervention_sensitivity(policy, env_config: EnvConfig,
                             n_probe_states: int, seed: int) -> InterventionReport:
    """Render each probe under do(T=t) for every t, everything else fixed,
    and record pairwise TV distances of the policy's action distributions."""
    rcfg = replace(env_config.render, confounded=True)
    per_state = []
    for state in sample_probe_states(env_config, n_probe_states, seed):
        obs = np.stack([envsim.render(envsim.intervene(state, t), rcfg)
                        for t in range(N_ACTIONS)])
        probs = policy.action_probs(obs)
        per_state.append([tv_distance(probs[a], probs[b])
                          for a, b in combinations(range(N_ACTIONS), 2)])
    flat = [d for row in per_state for d in row]
    return InterventionReport(
        per_state=per_state,
        mean_tv=float(np.mean(flat)),
        max_tv=float(np.max(flat)),
        n_probe_states=n_probe_states,
        seed=seed,
    )


def abc(score_m: float, score_bc: float) -> float:
    """Advantage over the BC baseline, as a signed percentage."""
    if score_bc == 0:
        raise UndefinedMetricError("baseline score is zero; advantage undefined")
    return 100.0 * (score_m - score_bc) / score_bc


def compare(run_manifests: list[dict]):
    """Aggregate per-(method, environment) scores into a mean/median
    advantage table.

    Each manifest is a dict with keys ``method``, ``environment``,
    ``score``. A ``BC`` entry must exist for every environment.
    Returns (table_text, machine_record).
    """
    if not run_manifests:
        raise ConfigurationError("no run manifests given")
    scores = {}
    for m in run_manifests:
        scores[(m["method"], m["environment"])] = float(m["score"])
    envs = sorted({e for _, e in scores})
    methods = sorted({m for m, _ in scores})
    missing = [e for e in envs if ("BC", e) not in scores]
    if missing:
        raise ConfigurationError(f"missing BC baseline for environments: {missing}")
    record = {"methods": {}}
    for method in methods:
        vals = [abc(scores[(method, e)], scores[("BC", e)])
                for e in envs if (method, e) in scores]
        record["methods"][method] = {
            "per_environment": {e: abc(scores[(method, e)], scores[("BC", e)])
                                for e in envs if (method, e) in scores},
            "mean_abc": statistics.mean(vals),
            "median_abc": statistics.median(vals),
        }
    width = max(len(m) for m in methods) + 2
    lines = [f"{'method':<{width}}{'mean ABC':>10}{'median ABC':>12}"]
    for method in methods:
        r = record["methods"][method]
        lines.append(f"{method:<{width}}{r['mean_abc']:>9.1f}%{r['median_abc']:>11.1f}%")
    return "\n".join(lines), record
