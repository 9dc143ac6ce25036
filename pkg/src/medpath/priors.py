"""Selection priors (MRF over gamma, subsetting Bernoulli over omega) and hyperpriors."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.special import expit, logit

from .model import FACovariance

_LOG_2PI = np.log(2.0 * np.pi)

DEFAULT_INCLUSION_PROB = 0.1
DEFAULT_RHO_CUT = 0.3


@dataclass(frozen=True)
class MrfGraph:
    """Symmetric sparse weights ``r_jl`` stored in CSR form.

    ``neighbors(j)`` lists every ``l`` with a nonzero weight.  Rows are sorted
    so neighbour sums are accumulated in a fixed order.
    """

    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    rho_cut: float = DEFAULT_RHO_CUT
    signed: bool = False

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        weights = np.ascontiguousarray(self.weights, dtype=float)
        if indptr.ndim != 1 or indptr[0] != 0 or indptr[-1] != indices.shape[0]:
            raise ValueError("malformed CSR index pointer")
        if indices.shape != weights.shape:
            raise ValueError("indices and weights differ in length")
        if np.any(np.abs(weights) > 1.0 + 1e-12):
            raise ValueError("MRF weights must satisfy |r| <= 1")
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "weights", weights)
        mat = self.to_sparse()
        if (abs(mat - mat.T) > 1e-12).nnz:
            raise ValueError("MRF weights must be symmetric")
        if np.any(mat.diagonal() != 0):
            raise ValueError("MRF weights must have a zero diagonal")

    @property
    def q(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def n_edges(self) -> int:
        return self.indices.shape[0] // 2

    def neighbors(self, j: int) -> np.ndarray:
        return self.indices[self.indptr[j]:self.indptr[j + 1]]

    def neighbor_weights(self, j: int) -> np.ndarray:
        return self.weights[self.indptr[j]:self.indptr[j + 1]]

    def to_sparse(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.weights, self.indices, self.indptr), shape=(self.q, self.q))

    @classmethod
    def empty(cls, q: int) -> "MrfGraph":
        return cls(np.zeros(q + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_matrix(cls, R, rho_cut: float = DEFAULT_RHO_CUT, signed: bool = False) -> "MrfGraph":
        """Keep off-diagonal entries with ``|R_jl| >= rho_cut``."""
        R = np.asarray(R, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("weight matrix must be square")
        W = R.copy() if signed else np.abs(R)
        np.fill_diagonal(W, 0.0)
        W = 0.5 * (W + W.T)
        W[np.abs(W) < rho_cut] = 0.0
        W[np.abs(W) == 0] = 0.0
        mat = sparse.csr_matrix(W)
        mat.sort_indices()
        return cls(mat.indptr, mat.indices, mat.data, rho_cut=rho_cut, signed=signed)

    @classmethod
    def from_mediators(cls, M, rho_cut: float = DEFAULT_RHO_CUT, signed: bool = False) -> "MrfGraph":
        """Pearson correlations of the mediator columns, thresholded at ``rho_cut``."""
        M = np.asarray(M, dtype=float)
        if M.shape[1] == 1:
            return cls.empty(1)
        sd = M.std(axis=0)
        if np.any(sd == 0):
            raise ValueError("constant mediator column; correlation undefined")
        R = np.corrcoef(M, rowvar=False)
        R = np.clip(R, -1.0, 1.0)
        return cls.from_matrix(R, rho_cut=rho_cut, signed=signed)

    def write_triplets(self, path) -> None:
        """Write ``j,l,r`` rows (0-based, upper triangle) with a header."""
        mat = sparse.triu(self.to_sparse(), k=1).tocoo()
        order = np.lexsort((mat.col, mat.row))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "l", "r"])
            w.writerow(["#q", self.q, repr(float(self.rho_cut))])
            for k in order:
                w.writerow([int(mat.row[k]), int(mat.col[k]), repr(float(mat.data[k]))])

    @classmethod
    def read_triplets(cls, path, q: Optional[int] = None) -> "MrfGraph":
        rows, cols, vals = [], [], []
        rho_cut = DEFAULT_RHO_CUT
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["j", "l", "r"]:
                raise ValueError(f"{path}: expected header j,l,r")
            for rec in reader:
                if not rec:
                    continue
                if rec[0] == "#q":
                    q = int(rec[1]) if q is None else q
                    rho_cut = float(rec[2])
                    continue
                rows.append(int(rec[0]))
                cols.append(int(rec[1]))
                vals.append(float(rec[2]))
        if q is None:
            q = max(rows + cols) + 1 if rows else 0
        signed = any(v < 0 for v in vals)
        upper = sparse.coo_matrix((vals, (rows, cols)), shape=(q, q))
        mat = (upper + upper.T).tocsr()
        mat.sort_indices()
        return cls(mat.indptr, mat.indices, mat.data, rho_cut=rho_cut, signed=signed)


def _vec(value, length, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(length, float(arr))
    if arr.shape != (length,):
        raise ValueError(f"{name} must have length {length}, got {arr.shape}")
    if np.any(arr <= 0):
        raise ValueError(f"{name} entries must be positive")
    return arr


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters for every prior in the joint model.

    ``sigma_beta`` and ``sigma_alpha`` hold prior *variances* of
    ``(beta0_j, B_j)`` and ``(alpha0, alpha, alpha_a)`` respectively.
    """

    q: int
    p: int
    nu2: np.ndarray
    psi2: np.ndarray
    sigma_beta: np.ndarray
    sigma_alpha: np.ndarray
    mu_lambda: float = 0.0
    h_lambda: float = 100.0
    nu0: float = 6.0
    sigma02: float = 1.0 / 3.0
    eta1_gamma: float = float(logit(DEFAULT_INCLUSION_PROB))
    eta2_gamma: float = 0.0
    pi_omega: float = DEFAULT_INCLUSION_PROB
    mrf_graph: MrfGraph = field(default=None)

    def __post_init__(self):
        q, p = int(self.q), int(self.p)
        object.__setattr__(self, "nu2", _vec(self.nu2, q, "nu2"))
        object.__setattr__(self, "psi2", _vec(self.psi2, q, "psi2"))
        object.__setattr__(self, "sigma_beta", _vec(self.sigma_beta, p + 1, "sigma_beta"))
        object.__setattr__(self, "sigma_alpha", _vec(self.sigma_alpha, p + 2, "sigma_alpha"))
        if self.mrf_graph is None:
            object.__setattr__(self, "mrf_graph", MrfGraph.empty(q))
        if self.mrf_graph.q != q:
            raise ValueError(f"MRF graph has {self.mrf_graph.q} nodes, expected {q}")
        if not (self.h_lambda > 0 and self.nu0 > 0 and self.sigma02 > 0):
            raise ValueError("h_lambda, nu0 and sigma02 must be positive")
        if not 0.0 < self.pi_omega < 1.0:
            raise ValueError("pi_omega must lie in (0, 1)")
        if not self.eta2_gamma >= 0:
            raise ValueError("eta2_gamma must be non-negative")

    @classmethod
    def default(cls, q: int, p: int, graph: Optional[MrfGraph] = None, **overrides) -> "PriorConfig":
        base = dict(
            q=q,
            p=p,
            nu2=1.0,
            psi2=1.0,
            sigma_beta=100.0,
            sigma_alpha=100.0,
            mrf_graph=graph,
        )
        base.update(overrides)
        return cls(**base)

    def with_eta2(self, eta2: float) -> "PriorConfig":
        return replace(self, eta2_gamma=float(eta2))

    def independent(self) -> "PriorConfig":
        """The independent-Bernoulli restriction (``eta2_gamma = 0``)."""
        return self.with_eta2(0.0)

    def to_dict(self) -> dict:
        g = self.mrf_graph
        return {
            "q": self.q,
            "p": self.p,
            "nu2": self.nu2.tolist(),
            "psi2": self.psi2.tolist(),
            "sigma_beta": self.sigma_beta.tolist(),
            "sigma_alpha": self.sigma_alpha.tolist(),
            "mu_lambda": self.mu_lambda,
            "h_lambda": self.h_lambda,
            "nu0": self.nu0,
            "sigma02": self.sigma02,
            "eta1_gamma": self.eta1_gamma,
            "eta2_gamma": self.eta2_gamma,
            "pi_omega": self.pi_omega,
            "mrf_graph": {"rho_cut": g.rho_cut, "signed": g.signed, "n_edges": g.n_edges},
        }


def neighbor_sum(j: int, gamma, graph: MrfGraph) -> float:
    s = 0.0
    for l, r in zip(graph.neighbors(j), graph.neighbor_weights(j)):
        s += r * gamma[l]
    return s


def mrf_logratio_flip(j: int, gamma, cfg: PriorConfig) -> float:
    """``log Pr(gamma_j = 1 | rest) - log Pr(gamma_j = 0 | rest)``."""
    if not 0 <= j < cfg.q:
        raise IndexError(j)
    return cfg.eta1_gamma + cfg.eta2_gamma * neighbor_sum(j, gamma, cfg.mrf_graph)


def mrf_conditional(j: int, gamma, cfg: PriorConfig) -> float:
    return float(expit(mrf_logratio_flip(j, gamma, cfg)))


def mrf_log_potential(gamma, cfg: PriorConfig) -> float:
    """Unnormalised log joint ``eta1 * sum(gamma) + eta2 * sum_{j<l} r_jl gamma_j gamma_l``."""
    g = np.asarray(gamma, dtype=float)
    W = cfg.mrf_graph.to_sparse()
    pair = 0.5 * float(g @ (W @ g))
    return cfg.eta1_gamma * float(g.sum()) + cfg.eta2_gamma * pair


def ssb_logprior(omega, gamma, cfg: PriorConfig) -> float:
    omega = np.asarray(omega)
    gamma = np.asarray(gamma)
    if np.any((omega == 1) & (gamma == 0)):
        return -np.inf
    on = gamma == 1
    k1 = int(np.sum(omega[on] == 1))
    k0 = int(np.sum(on)) - k1
    return k1 * np.log(cfg.pi_omega) + k0 * np.log1p(-cfg.pi_omega)


def _norm_logpdf(x, var):
    return -0.5 * (_LOG_2PI + np.log(var) + x * x / var)


def slab_variance_tau(j: int, cov: FACovariance, cfg: PriorConfig) -> float:
    return float(cfg.nu2[j] * cov.sigma2 * (cov.lam[j] ** 2 + 1.0))


def slab_logdensity_tau(tau_j: float, j: int, cov: FACovariance, cfg: PriorConfig) -> float:
    return float(_norm_logpdf(tau_j, slab_variance_tau(j, cov, cfg)))


def slab_logdensity_delta(delta_j: float, j: int, cfg: PriorConfig) -> float:
    return float(_norm_logpdf(delta_j, cfg.psi2[j]))


def inv_gamma_logpdf(x: float, shape: float, rate: float) -> float:
    from scipy.special import gammaln

    return float(shape * np.log(rate) - gammaln(shape) - (shape + 1.0) * np.log(x) - rate / x)


def hyper_logpriors(state, cfg: PriorConfig) -> float:
    """Sum of the non-selection log-priors.

    Covers ``(beta0_j, B_j)`` for every mediator, ``(alpha0, alpha, alpha_a)``,
    the loadings ``lam`` and ``sigma2``.  ``state`` needs ``mediator`` and
    ``outcome`` attributes.
    """
    med, out = state.mediator, state.outcome
    if not med.sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    total = 0.0
    total += float(np.sum(_norm_logpdf(med.beta0, cfg.sigma_beta[0])))
    if cfg.p:
        total += float(np.sum(_norm_logpdf(med.B, cfg.sigma_beta[1:, None])))
    alpha_full = np.concatenate([[out.alpha0], np.asarray(out.alpha, float), [out.alpha_a]])
    total += float(np.sum(_norm_logpdf(alpha_full, cfg.sigma_alpha)))
    total += float(np.sum(_norm_logpdf(med.lam - cfg.mu_lambda, cfg.h_lambda * med.sigma2)))
    total += inv_gamma_logpdf(med.sigma2, cfg.nu0 / 2.0, cfg.nu0 * cfg.sigma02 / 2.0)
    return total
