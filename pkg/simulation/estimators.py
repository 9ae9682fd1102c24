"""Monte Carlo values, family envelopes and the uniformity test.

Path ``i`` of an estimate always uses stream ``(master_seed, i)``. Streams are
cut into fixed-size chunks that may run on a thread pool, and the chunk results
are joined back in stream order, so an estimate does not depend on the worker
count.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Tuple

import numpy as np
from scipy import stats

from .exceptions import NumericalAbort, PolicyError
from .paths import RngStream
from .sde import Policy, payoff, simulate

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 1024
CONFIDENCE = 0.95
# 1% critical value of the one-sample KS statistic, times sqrt(n).
KS_CRITICAL_1PCT = 1.63


def normal_quantile(confidence=CONFIDENCE):
    return float(stats.norm.ppf(1 - (1 - confidence) / 2))


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    stderr: float
    n_paths: int
    ci95: Tuple[float, float]
    master_seed: int
    flags: Mapping = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples, master_seed, flags=None):
        samples = np.asarray(samples, dtype=float)
        n = len(samples)
        if n < 2:
            raise ValueError(f'an estimate needs at least 2 paths, got {n}')
        mean = float(np.mean(samples))
        stderr = float(np.std(samples, ddof=1) / math.sqrt(n))
        return cls.from_moments(mean, stderr, n, master_seed, flags)

    @classmethod
    def from_moments(cls, mean, stderr, n_paths, master_seed, flags=None):
        z = normal_quantile()
        return cls(
            mean=float(mean),
            stderr=float(stderr),
            n_paths=int(n_paths),
            ci95=(float(mean - z * stderr), float(mean + z * stderr)),
            master_seed=int(master_seed),
            flags=dict(flags or {}),
        )

    def overlaps(self, other):
        return self.ci95[0] <= other.ci95[1] and other.ci95[0] <= self.ci95[1]

    def agrees_with(self, other, n_stderr=3.0):
        """|difference| within n_stderr combined standard errors."""
        return abs(self.mean - other.mean) <= n_stderr * math.hypot(self.stderr, other.stderr)

    def to_record(self, experiment, member, **extra):
        record = {
            'experiment': experiment,
            'member': member,
            'mean': self.mean,
            'stderr': self.stderr,
            'ci95': list(self.ci95),
            'n_paths': self.n_paths,
            'seed': self.master_seed,
            'flags': dict(sorted(self.flags.items())),
        }
        record.update(extra)
        return record


@dataclass(frozen=True)
class FamilyMember:
    label: str
    policy: Policy
    params: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class PolicyFamily:
    """A finite family of policies of one loop type; its envelope bounds V from below."""

    name: str
    members: tuple

    def __post_init__(self):
        if not self.members:
            raise PolicyError(f'policy family {self.name!r} is empty')
        loops = {member.policy.kind.loop for member in self.members}
        if len(loops) != 1:
            raise PolicyError(f'policy family {self.name!r} mixes {sorted(loops)} policies')

    @property
    def loop(self):
        return self.members[0].policy.kind.loop

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def extended(self, *members):
        return PolicyFamily(self.name, tuple(self.members) + tuple(members))


def run_chunked(fn, master_seed, n_paths, threads=1, chunk_size=DEFAULT_CHUNK_SIZE):
    """Apply ``fn`` to consecutive stream chunks and join the results in order.

    ``fn`` gets a tuple of streams and returns an array, or a tuple of arrays,
    with one leading entry per stream.
    """
    if chunk_size < 1:
        raise ValueError(f'chunk_size must be positive, got {chunk_size}')
    starts = range(0, n_paths, chunk_size)

    def evaluate(start):
        streams = RngStream.batch(master_seed, min(chunk_size, n_paths - start), start)
        try:
            return fn(streams)
        except NumericalAbort as exc:
            raise exc.shifted(start) from exc

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(evaluate, starts))
    else:
        parts = [evaluate(start) for start in starts]

    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(column) for column in zip(*parts))
    return np.concatenate(parts)


def sample_payoffs(problem, policy, grid, n_paths, master_seed, threads=1, chunk_size=DEFAULT_CHUNK_SIZE):
    """Per-path payoffs and per-path clamp counts."""

    def chunk(streams):
        solution = simulate(problem, policy, grid, streams)
        clamps = np.zeros(solution.n_paths, dtype=int)
        clamps[0] = solution.clamp_violations
        return payoff(problem, solution), clamps

    return run_chunked(chunk, master_seed, n_paths, threads, chunk_size)


def estimate_value(problem, policy, grid, n_paths, master_seed, threads=1,
                   chunk_size=DEFAULT_CHUNK_SIZE) -> ValueEstimate:
    """J(policy) = E[g] over streams 0..n_paths-1."""
    if n_paths < 2:
        raise ValueError(f'n_paths must be at least 2, got {n_paths}')
    values, clamps = sample_payoffs(problem, policy, grid, n_paths, master_seed, threads, chunk_size)
    estimate = ValueEstimate.from_samples(values, master_seed, {'clamped_actions': int(clamps.sum())})
    logger.debug('%s: mean %.6f stderr %.6f over %d paths',
                 policy.label or policy.kind.value, estimate.mean, estimate.stderr, n_paths)
    return estimate


def value_envelope(problem, family: PolicyFamily, grid, n_paths, master_seed, threads=1,
                   chunk_size=DEFAULT_CHUNK_SIZE):
    """Estimate every member on common streams; returns (best, [(member, estimate), ...]).

    ``best`` is the first member with the largest mean. It is a lower bound on
    the supremum over the whole policy class, never the supremum itself.
    """
    per_member = [
        (member, estimate_value(problem, member.policy, grid, n_paths, master_seed, threads, chunk_size))
        for member in family
    ]
    best_member, best = max(per_member, key=lambda pair: pair[1].mean)
    best = ValueEstimate(
        mean=best.mean, stderr=best.stderr, n_paths=best.n_paths, ci95=best.ci95,
        master_seed=best.master_seed,
        flags={**best.flags, 'family': family.name, 'family_size': len(family), 'best_member': best_member.label},
    )
    logger.info('envelope of %s (%d members): best %s at %.4f',
                family.name, len(family), best_member.label, best.mean)
    return best, per_member


@dataclass(frozen=True)
class KsResult:
    statistic: float
    reject_at_1pct: bool
    n: int
    p_value: float

    @property
    def critical_value(self):
        return KS_CRITICAL_1PCT / math.sqrt(self.n)


def ks_uniformity_test(samples) -> KsResult:
    """One-sample Kolmogorov-Smirnov test against Uniform[0, 1)."""
    samples = np.asarray(samples, dtype=float).ravel()
    n = len(samples)
    if n < 100:
        raise ValueError(f'the KS test needs at least 100 samples, got {n}')
    if np.any(samples < 0) or np.any(samples >= 1):
        raise ValueError('uniformity samples must lie in [0, 1)')
    result = stats.kstest(samples, 'uniform')
    statistic = float(result.statistic)
    return KsResult(
        statistic=statistic,
        reject_at_1pct=statistic > KS_CRITICAL_1PCT / math.sqrt(n),
        n=n,
        p_value=float(result.pvalue),
    )
