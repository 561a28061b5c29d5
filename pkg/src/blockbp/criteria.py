"""Model-selection criteria and closed-form marginal-likelihood oracles.

The smoothed penalties r1/r2 and the dimension penalty ell_tilde assemble the
tractable lower bound of the fully marginalized log-likelihood; icl/cicl/fic
are the baseline criteria evaluated from the same belief state.  For small
hard assignments, `exact_joint_marginal` integrates the parameters out in
closed form (conjugate Beta/Dirichlet integrals under flat natural-parameter
priors) and `joint_marginal_laplace` evaluates the matching asymptotic
expansion term by term, so the two can be compared on a growing-n grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln

from .model import (
    EPS_P,
    bicluster_counts,
    expected_joint_log_likelihood,
    hard_moments,
    joint_log_likelihood,
    label_counts,
    m_step,
)

LOG_HALF = math.log(0.5)
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class CriterionReport:
    """Criterion values and penalty components for one fitted state."""

    ffic_lb: float
    fic: float
    icl: float
    cicl: float
    entropy: float
    r1_tilde: float
    r2_tilde: float
    ell_tilde: float
    entropy_negative: bool = False
    degenerate: bool = False


@dataclass
class ExactMarginal:
    """Closed-form log joint marginal of a hard assignment, or a divergence flag."""

    value: float
    divergent: bool = False
    reason: str = ""


@dataclass
class JointMarginalTerms:
    """Term-by-term asymptotic expansion of the log joint marginal."""

    max_ll: float
    r1: float
    r2: float
    ell_n: float
    c_const: float
    s_set: list
    m_star: float
    k_zbar: int
    k_zz: int
    m_bar: np.ndarray
    clamped: bool = False
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.max_ll - self.r1 - self.r2 - self.ell_n + self.c_const


# -- smoothed penalties --------------------------------------------------------


def r1_tilde(zbar, n):
    """Smoothed cluster-size penalty: 0.5 * sum_k log(zbar_k + 1/n)."""
    zbar = np.asarray(zbar, dtype=np.float64)
    return 0.5 * float(np.sum(np.log(zbar + 1.0 / n)))


def r2_tilde(zzbar, n):
    """Smoothed bicluster-size penalty: 0.5 * sum_{k<=l} log(zz_kl + 1/n^2)."""
    zzbar = np.asarray(zzbar, dtype=np.float64)
    iu = np.triu_indices(zzbar.shape[0])
    return 0.5 * float(np.sum(np.log(zzbar[iu] + 1.0 / n**2)))


def ell_tilde(n, k):
    """Dimension penalty: (K-1)/2 log n + K(K+1)/4 log(n(n+1)/2)."""
    return (k - 1) / 2.0 * math.log(n) + k * (k + 1) / 4.0 * math.log(n * (n + 1) / 2.0)


# -- entropy ---------------------------------------------------------------------


def _entropy(p):
    p = np.asarray(p, dtype=np.float64)
    terms = np.where(p > 0, p * np.log(np.clip(p, 1e-300, None)), 0.0)
    return -float(terms.sum())


def bethe_entropy(graph, state, params, edge_beliefs=None):
    """Bethe entropy of the current beliefs.

    Pairwise-belief entropies over message-carrying edges plus
    (1 - degree) times each node-belief entropy.  The Bethe form is not
    guaranteed nonnegative off trees; the value is reported as-is.
    """
    beliefs = np.asarray(state.node_belief, dtype=np.float64)
    degrees = graph.degrees
    plogp = np.where(beliefs > 0, beliefs * np.log(np.clip(beliefs, 1e-300, None)), 0.0)
    node_part = float(((1.0 - degrees) * (-plogp.sum(axis=1))).sum())
    edge_part = 0.0
    if graph.m:
        eb = state.edge_beliefs(params) if edge_beliefs is None else edge_beliefs
        nonself = graph.edges[:, 0] != graph.edges[:, 1]  # self-loops carry no message
        pb = eb[nonself]
        terms = np.where(pb > 0, pb * np.log(np.clip(pb, 1e-300, None)), 0.0)
        edge_part = -float(terms.sum())
    return edge_part + node_part


# -- criterion values ---------------------------------------------------------------


def _components(graph, state, params):
    eb = state.edge_beliefs(params)
    expected_ll = expected_joint_log_likelihood(graph, state.node_belief, params, eb)
    moments = state.moments()
    entropy = bethe_entropy(graph, state, params, edge_beliefs=eb)
    return expected_ll, moments, entropy


def ffic_lower_bound(graph, state, params):
    """Lower bound of the fully marginalized log-likelihood at these beliefs."""
    expected_ll, moments, entropy = _components(graph, state, params)
    k = state.k_active
    return (
        expected_ll
        - r1_tilde(moments.zbar, graph.n)
        - r2_tilde(moments.zzbar, graph.n)
        - ell_tilde(graph.n, k)
        + entropy
    )


def fic_value(graph, state, params):
    """Criterion with the cluster-size penalty scaled by K(K+1)/2 and no
    bicluster term."""
    expected_ll, moments, entropy = _components(graph, state, params)
    k = state.k_active
    scale = k * (k + 1) / 2.0
    return expected_ll - scale * r1_tilde(moments.zbar, graph.n) - ell_tilde(graph.n, k) + entropy


def icl_value(graph, state, params):
    """Classification-likelihood criterion: hard MAP plug-in minus dimension
    penalty."""
    k = state.k_active
    labels = state.map_assignment()
    ml_params, _ = m_step(hard_moments(graph, labels, k))
    return joint_log_likelihood(graph, labels, ml_params) - ell_tilde(graph.n, k)


def cicl_value(graph, state, params):
    """Entropy-corrected classification criterion on the soft beliefs."""
    expected_ll, _, entropy = _components(graph, state, params)
    return expected_ll + entropy - ell_tilde(graph.n, state.k_active)


def criterion_report(graph, state, params):
    """All criterion values from one shared pass over the beliefs."""
    expected_ll, moments, entropy = _components(graph, state, params)
    n, k = graph.n, state.k_active
    r1 = r1_tilde(moments.zbar, n)
    r2 = r2_tilde(moments.zzbar, n)
    lt = ell_tilde(n, k)
    ffic = expected_ll - r1 - r2 - lt + entropy
    fic = expected_ll - (k * (k + 1) / 2.0) * r1 - lt + entropy
    labels = state.map_assignment()
    ml_params, _ = m_step(hard_moments(graph, labels, k))
    icl = joint_log_likelihood(graph, labels, ml_params) - lt
    cicl = expected_ll + entropy - lt
    degenerate = not all(map(math.isfinite, (ffic, fic, icl, cicl)))
    return CriterionReport(
        ffic_lb=float(ffic),
        fic=float(fic),
        icl=float(icl),
        cicl=float(cicl),
        entropy=float(entropy),
        r1_tilde=float(r1),
        r2_tilde=float(r2),
        ell_tilde=float(lt),
        entropy_negative=bool(entropy < 0),
        degenerate=degenerate,
    )


# -- exact and asymptotic joint marginals ----------------------------------------------


def exact_joint_marginal(graph, labels, k=None):
    """Closed-form log p(X, Z) under flat natural-parameter priors.

    Each occupied bicluster contributes log B(e, c - e); the proportions
    contribute log prod_k Gamma(n_k) / Gamma(n).  The flat priors diverge on
    empty clusters and on biclusters with all or no edges, so such
    configurations come back flagged instead of valued.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if k is None:
        k = int(labels.max()) + 1
    n = graph.n
    counts = label_counts(labels, k)
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        return ExactMarginal(math.nan, True, f"empty cluster {missing}: prior integral diverges")
    e, c = bicluster_counts(graph, labels, k)
    value = 0.0
    for a in range(k):
        for b in range(a, k):
            if c[a, b] <= 0:
                return ExactMarginal(math.nan, True, f"bicluster ({a},{b}) has no pairs")
            if e[a, b] <= 0 or e[a, b] >= c[a, b]:
                return ExactMarginal(
                    math.nan,
                    True,
                    f"bicluster ({a},{b}) fully empty or fully connected: integral diverges",
                )
            value += float(betaln(e[a, b], c[a, b] - e[a, b]))
    value += float(np.sum(gammaln(counts)) - gammaln(n))
    return ExactMarginal(value, False, "")


def joint_marginal_laplace(graph, labels, params_hat=None, k=None):
    """Asymptotic expansion of log p(X, Z) around the likelihood maximum.

    Occupied clusters and biclusters take the Laplace route (curvature
    penalties r1, r2 plus the dimension penalty ell_n); empty components
    route into the additive constant, which under flat priors collects
    log(1/2) per empty component plus the Gaussian-integral constants.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if k is None:
        k = int(labels.max()) + 1
    n = graph.n
    counts = label_counts(labels, k)
    zbar = counts / n
    moments = hard_moments(graph, labels, k)
    if params_hat is None:
        params_hat, _ = m_step(moments)

    occupied = counts > 0
    s_set = np.flatnonzero(occupied).tolist()
    k_zbar = len(s_set)
    zz = moments.zzbar

    max_ll = joint_log_likelihood(graph, labels, params_hat)
    r1 = 0.5 * float(np.sum(np.log(zbar[occupied])))

    r2 = 0.0
    k_zz = 0
    clamped = False
    c_const = (k_zbar - 1) / 2.0 * LOG_2PI + (k - k_zbar) * LOG_HALF
    for a in range(k):
        for b in range(a, k):
            if not (occupied[a] and occupied[b]):
                continue
            if zz[a, b] > 0:
                k_zz += 1
                curvature = zz[a, b] * (1.0 - params_hat.pi[a, b])
                if curvature < EPS_P:
                    # fully-connected bicluster: curvature vanishes and the
                    # expansion (like the flat-prior integral) degenerates
                    curvature = EPS_P
                    clamped = True
                r2 += 0.5 * math.log(curvature)
                c_const += 0.5 * (LOG_2PI if a == b else LOG_2PI - math.log(2.0))
            else:
                c_const += LOG_HALF  # empty bicluster between occupied clusters

    ell_n = (k_zbar - 1) / 2.0 * math.log(n) + k_zz / 2.0 * math.log(n * (n + 1) / 2.0)
    m_star = n * n * float(np.min(zbar[occupied]) ** 2) if s_set else 0.0
    m_bar = (n * n / 2.0) * (np.outer(zbar, zbar) + np.diag(zbar) / n)
    return JointMarginalTerms(
        max_ll=max_ll,
        r1=r1,
        r2=r2,
        ell_n=ell_n,
        c_const=c_const,
        s_set=s_set,
        m_star=m_star,
        k_zbar=k_zbar,
        k_zz=k_zz,
        m_bar=m_bar,
    )
