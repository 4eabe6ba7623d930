"""Seeded synthetic i-vector corpora with near/far language clusters.

Every record is ``mu_l + eps`` with ``eps ~ N(0, sigma2(d) I)`` and
``sigma2(d) = a + b / d``, so short segments are noisier.  Language means are
grouped into clusters: languages inside a cluster are close (confusable),
clusters are far apart.  All randomness comes from ``numpy.random.PCG64``
streams spawned from one ``SeedSequence(seed)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .data_io import OUT_OF_SET, Corpus
from .errors import DomainError


@dataclass(frozen=True)
class SynthSpec:
    n_languages: int = 10
    # (spread of language means around the cluster centre, languages in the cluster)
    clusters: tuple = ((1.0, 4), (1.0, 3), (1.0, 3))
    dim: int = 50
    per_language_count: int = 200
    duration_range_s: tuple = (3.0, 60.0)
    noise_a: float = 0.0
    noise_b: float = 1.0
    seed: int = 1
    cluster_distance: float = 4.0
    dev_count: int = 1500
    test_count: int = 1299
    oos_fraction: float = 0.23
    n_oos_languages: int = 3
    language_names: tuple = field(default=None)

    def validate(self):
        if self.n_languages < 2:
            raise DomainError("n_languages must be >= 2")
        if sum(n for _, n in self.clusters) != self.n_languages:
            raise DomainError("languages per cluster must sum to n_languages")
        if any(n < 1 for _, n in self.clusters):
            raise DomainError("every cluster needs at least one language")
        if any(s < 0 for s, _ in self.clusters):
            raise DomainError("cluster spreads must be non-negative")
        if self.dim < 1:
            raise DomainError("dim must be >= 1")
        if self.per_language_count < 2:
            raise DomainError("per_language_count must be >= 2 (leave-one-out needs two records)")
        lo, hi = self.duration_range_s
        if not 0 < lo < hi:
            raise DomainError("duration_range_s must satisfy 0 < min < max")
        if self.noise_a < 0 or self.noise_b < 0 or self.noise_a + self.noise_b == 0:
            raise DomainError("noise law needs a, b >= 0, not both zero")
        if not 0 <= self.oos_fraction < 1:
            raise DomainError("oos_fraction must lie in [0, 1)")
        if self.oos_fraction > 0 and self.n_oos_languages < 1:
            raise DomainError("out-of-set test records need n_oos_languages >= 1")
        if self.dev_count < 0 or self.test_count < 0:
            raise DomainError("record counts must be non-negative")
        if self.cluster_distance <= 0:
            raise DomainError("cluster_distance must be positive")
        if self.language_names is not None and len(self.language_names) != self.n_languages:
            raise DomainError("language_names must list n_languages names")

    @property
    def languages(self):
        if self.language_names is not None:
            return list(self.language_names)
        width = max(2, len(str(self.n_languages - 1)))
        return [f"lang{i:0{width}d}" for i in range(self.n_languages)]

    def noise_variance(self, durations):
        return self.noise_a + self.noise_b / np.asarray(durations, dtype=float)


def _unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def language_means(spec):
    """Return (in-set means (L, D), out-of-set means (K, D), cluster index per in-set language)."""
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed).spawn(4)[0]))
    centres = [spec.cluster_distance / np.sqrt(2.0) * _unit(rng, spec.dim) for _ in spec.clusters]
    means, cluster_of = [], []
    for k, (spread, count) in enumerate(spec.clusters):
        for _ in range(count):
            means.append(centres[k] + spread / np.sqrt(2.0) * _unit(rng, spec.dim))
            cluster_of.append(k)
    oos = []
    for j in range(spec.n_oos_languages):
        k = j % len(spec.clusters)
        spread = spec.clusters[k][0]
        oos.append(centres[k] + spread / np.sqrt(2.0) * _unit(rng, spec.dim))
    oos = np.array(oos).reshape(spec.n_oos_languages, spec.dim)
    return np.array(means), oos, np.array(cluster_of)


def _draw(rng, spec, mean_rows, n):
    lo, hi = spec.duration_range_s
    durations = np.exp(rng.uniform(np.log(lo), np.log(hi), size=n))
    sd = np.sqrt(spec.noise_variance(durations))
    vectors = mean_rows + sd[:, None] * rng.standard_normal((n, spec.dim))
    return durations, vectors


def generate_synthetic_corpus(spec):
    """Return ``(dev, train, test)`` corpora for ``spec``.

    dev is unlabeled, train is labeled and grouped by language, test is
    shuffled and labeled (out-of-set records carry ``out_of_set``).
    """
    spec.validate()
    means, oos_means, _ = language_means(spec)
    names = spec.languages
    L = spec.n_languages
    seeds = np.random.SeedSequence(spec.seed).spawn(4)
    dev_rng, train_rng, test_rng = (np.random.Generator(np.random.PCG64(s)) for s in seeds[1:])

    # dev: unlabeled mix of in-set and out-of-set languages
    all_means = np.vstack([means, oos_means])
    source = dev_rng.integers(0, len(all_means), size=spec.dev_count)
    dur, vec = _draw(dev_rng, spec, all_means[source], spec.dev_count)
    dev = Corpus([f"dev{i:06d}" for i in range(spec.dev_count)], dur, [None] * spec.dev_count, vec,
                 dim=spec.dim)

    n = spec.per_language_count
    lang_idx = np.repeat(np.arange(L), n)
    dur, vec = _draw(train_rng, spec, means[lang_idx], L * n)
    train = Corpus([f"trn_{names[l]}_{i % n:05d}" for i, l in enumerate(lang_idx)], dur,
                   [names[l] for l in lang_idx], vec, dim=spec.dim)

    n_oos = int(round(spec.test_count * spec.oos_fraction))
    n_in = spec.test_count - n_oos
    in_idx = np.arange(n_in) % L
    oos_idx = np.arange(n_oos) % max(spec.n_oos_languages, 1)
    rows = np.vstack([means[in_idx], oos_means[oos_idx]]) if n_oos else means[in_idx]
    labels = [names[l] for l in in_idx] + [OUT_OF_SET] * n_oos
    order = test_rng.permutation(spec.test_count)
    dur, vec = _draw(test_rng, spec, rows[order], spec.test_count)
    test = Corpus([f"tst{i:06d}" for i in range(spec.test_count)], dur, [labels[i] for i in order], vec,
                  dim=spec.dim)
    return dev, train, test
