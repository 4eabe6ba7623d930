"""Minimum-message-length mixture fitting with component annihilation.

Component-wise EM starts from ``c_max`` components; a component whose
effective support drops below half its parameter count is annihilated.
Once a configuration converges its message length is recorded, the
weakest surviving component is removed, and the search continues down to
one component.  The configuration with the shortest message wins.
"""

import numpy as np

from .errors import DomainError, NumericError
from .gmm import (_LOG_2PI, FULL, GmmModel, _check_data, _floor_covariances, fit_gmm_em,
                  variance_floor)


def params_per_component(dim, covariance_kind):
    """Free parameters charged per component in the message length (weight included)."""
    if covariance_kind == FULL:
        return dim + dim * (dim + 1) / 2 + 1
    return 2 * dim + 1


def message_length(loglik_total, weights, n, n_params):
    """MML objective for a mixture with positive ``weights`` fitted to ``n`` points."""
    k = len(weights)
    return (n_params / 2.0 * np.sum(np.log(n * weights / 12.0))
            + k / 2.0 * np.log(n / 12.0)
            + k * (n_params + 1) / 2.0
            - loglik_total)


def _component_log_density(data, mean, cov, kind):
    diff = data - mean
    D = data.shape[1]
    if kind == FULL:
        prec = np.linalg.inv(cov)
        logdet = np.linalg.slogdet(cov)[1]
        quad = np.sum((diff @ prec) * diff, axis=1)
    else:
        logdet = np.sum(np.log(cov))
        quad = (diff ** 2) @ (1.0 / cov)
    return -0.5 * (D * _LOG_2PI + logdet + quad)


def _row_logsumexp(a):
    top = a.max(axis=1)
    return top + np.log(np.sum(np.exp(a - top[:, None]), axis=1))


def fit_gmm_mml(data, c_max, max_iter=500, tol=1e-5, var_floor=1e-4, seed=0,
                covariance_kind=FULL, return_path=False):
    """Fit a mixture with the number of components chosen by message length.

    Returns the best :class:`GmmModel`; with ``return_path`` also a list of
    ``(n_components, message_length)`` for every converged configuration.
    """
    data = _check_data(data)
    n, D = data.shape
    if c_max < 1:
        raise DomainError("c_max must be >= 1")
    if n <= c_max:
        raise DomainError(f"MML fit needs more than c_max={c_max} points, got {n}")
    n_params = params_per_component(D, covariance_kind)

    if c_max == 1:
        model = fit_gmm_em(data, 1, var_floor=var_floor, covariance_kind=covariance_kind)
        ml = message_length(float(np.sum(model.log_likelihood(data))), model.weights, n, n_params)
        return (model, [(1, ml)]) if return_path else model

    if np.all(data.var(axis=0) == 0):
        raise NumericError("all data points are identical")
    floor = variance_floor(data, var_floor)
    rng = np.random.Generator(np.random.PCG64(seed))
    means = data[rng.choice(n, size=c_max, replace=False)].copy()
    init_var = np.max(data.var(axis=0)) / 10.0
    if covariance_kind == FULL:
        covs = np.tile(np.eye(D) * init_var, (c_max, 1, 1))
    else:
        covs = np.full((c_max, D), init_var)
    covs = _floor_covariances(covs, covariance_kind, floor)
    # unnormalized weights: responsibilities only depend on their ratios
    beta = np.full(c_max, 1.0 / c_max)
    alive = np.ones(c_max, dtype=bool)
    log_u = np.column_stack([_component_log_density(data, means[m], covs[m], covariance_kind)
                             for m in range(c_max)])
    half = n_params / 2.0

    def refresh():
        with np.errstate(divide="ignore"):
            la = log_u + np.log(np.where(alive, beta, 0.0))
        ref = la.max(axis=1)
        P = np.asfortranarray(np.exp(la - ref[:, None]))
        return ref, P, P.sum(axis=1)

    best = None
    path = []
    while True:
        prev = None
        for _ in range(max_iter):
            beta /= beta[alive].sum()
            ref, P, tot = refresh()
            for m in np.flatnonzero(alive):
                w = P[:, m] / tot
                support = w.sum()
                new_alpha = max(0.0, support - half) / n
                if new_alpha > 0:
                    means[m] = w @ data / support
                    diff = data - means[m]
                    if covariance_kind == FULL:
                        cov = (w * diff.T) @ diff / support
                    else:
                        cov = w @ (diff ** 2) / support
                    covs[m] = _floor_covariances(cov[None], covariance_kind, floor)[0]
                    log_u[:, m] = _component_log_density(data, means[m], covs[m], covariance_kind)
                    beta[m] = new_alpha * beta[alive].sum()
                    with np.errstate(over="ignore"):
                        col = np.exp(log_u[:, m] + np.log(beta[m]) - ref)
                else:
                    alive[m] = False
                    beta[m] = 0.0
                    col = np.zeros(n)
                    if not alive.any():
                        raise NumericError("every mixture component was annihilated")
                new_tot = tot - P[:, m] + col
                P[:, m] = col
                # fall back to a full recomputation when the running sum cancels badly
                if np.all(new_tot > 1e-6 * tot) and np.all(np.isfinite(new_tot)):
                    tot = new_tot
                else:
                    ref, P, tot = refresh()
            k = int(alive.sum())
            total_beta = beta[alive].sum()
            ll = float(np.sum(ref + np.log(tot)) - n * np.log(total_beta))
            if not np.isfinite(ll):
                raise NumericError("log-likelihood became non-finite during MML fitting")
            length = message_length(ll, beta[alive] / total_beta, n, n_params)
            if prev is not None and prev - length < tol * abs(prev):
                break
            prev = length
        path.append((k, length))
        if best is None or length <= best[0]:
            weights = beta[alive] / beta[alive].sum()
            best = (length, weights, means[alive].copy(), covs[alive].copy())
        if k == 1:
            break
        weakest = np.flatnonzero(alive)[np.argmin(beta[alive])]
        alive[weakest] = False
        beta[weakest] = 0.0

    _, w, mu, cov = best
    model = GmmModel(w / w.sum(), mu, cov, covariance_kind)
    return (model, path) if return_path else model
