"""
Structure selection service.
Chooses link families by per-pair BIC against posterior-median latents,
builds the factor-vine's second level and scores whole models by BIC.
"""

import heapq
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.optimize import minimize, minimize_scalar
from scipy.stats import kendalltau

from app.models import bivariate as biv
from app.models.factor import FactorCopula
from app.schemas.copula import BivariateCopula, CopulaFamily
from app.schemas.factor import FactorKind, FactorModelSpec, GroupPartition, LinkSlot, VineEdge
from app.schemas.selection import ModelScore, SelectionAuditRow, SelectionConfig, SelectionResult
from app.services.vb_service import DataLike, as_matrix, vb_service

logger = logging.getLogger(__name__)

DTYPE = torch.float64
_TAU_MARGIN = 1e-4
_GAUSSIAN_START = BivariateCopula(family=CopulaFamily.GAUSSIAN, theta=(0.45399049973954675,))


class PairFit:
    """Maximum-likelihood fit of one family to one pair of uniform samples."""

    def __init__(self, family: CopulaFamily, copula: BivariateCopula, log_likelihood: float, n_obs: int):
        self.family = family
        self.copula = copula
        self.log_likelihood = log_likelihood
        self.n_params = family.n_params
        self.bic = -2.0 * log_likelihood + self.n_params * math.log(n_obs)


class SelectionService:
    """Service for automated link selection and BIC scoring."""

    # Pair fitting

    def fit_pair(
        self, family: CopulaFamily, a: np.ndarray, b: np.ndarray, nonnegative: bool = False
    ) -> PairFit:
        """
        Fit a family by maximizing the pair log-likelihood over Kendall tau
        (and degrees of freedom for Student-t).
        """
        n = len(a)
        if family is CopulaFamily.INDEPENDENCE:
            return PairFit(family, BivariateCopula(family=family), 0.0, n)
        ua, ub = torch.as_tensor(a, dtype=DTYPE), torch.as_tensor(b, dtype=DTYPE)
        lo, hi = biv.tau_bounds(family, nonnegative)
        lo, hi = lo + _TAU_MARGIN, hi - _TAU_MARGIN

        def loglik(tau: float, df: Optional[float] = None) -> float:
            with torch.no_grad():
                first = biv.theta_from_tau_tensor(family, torch.tensor(tau, dtype=DTYPE))
                theta = torch.stack([first, torch.tensor(df, dtype=DTYPE)]) if df else first[None]
                value = float(biv.log_pdf(family, theta, ua, ub).sum())
            return value if math.isfinite(value) else -1e12

        if family.base is CopulaFamily.STUDENT_T:
            tau0 = float(np.clip(kendalltau(a, b)[0], lo, hi))
            res = minimize(
                lambda x: -loglik(x[0], x[1]),
                x0=[tau0, 8.0],
                bounds=[(lo, hi), (2.1, 50.0)],
                method="L-BFGS-B",
            )
            tau, df = float(res.x[0]), float(res.x[1])
            ll = -float(res.fun)
            theta = biv.tau_to_theta(family, tau, df=df)
        else:
            res = minimize_scalar(
                lambda t: -loglik(t), bounds=(lo, hi), method="bounded", options={"xatol": 1e-7}
            )
            tau, ll = float(res.x), -float(res.fun)
            theta = biv.tau_to_theta(family, tau)
        return PairFit(family, BivariateCopula(family=family, theta=theta), ll, n)

    def select_pair_family(
        self,
        a: np.ndarray,
        b: np.ndarray,
        candidates: Sequence[CopulaFamily],
        tie_margin: float = 2.0,
        nonnegative: bool = False,
    ) -> Tuple[PairFit, List[PairFit]]:
        """
        Fit every admissible candidate and pick by BIC; within ``tie_margin`` of
        the best BIC the family with fewer parameters wins.
        """
        fits = []
        for family in candidates:
            if nonnegative and family.tau_sign < 0:
                continue
            try:
                fits.append(self.fit_pair(family, a, b, nonnegative))
            except Exception as e:
                logger.warning(f"Pair fit for {family.value} failed: {str(e)}")
        if not fits:
            raise ValueError("no candidate family could be fitted")
        best_bic = min(f.bic for f in fits)
        close = [f for f in fits if f.bic <= best_bic + tie_margin]
        chosen = min(close, key=lambda f: (f.n_params, f.bic))
        return chosen, fits

    # Link selection loop

    def _pair_for_slot(
        self, slot: LinkSlot, spec: FactorModelSpec, u: np.ndarray, v: np.ndarray, chosen: List[BivariateCopula]
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Observed pair for a link, with latents fixed at ``v`` and earlier choices in ``chosen``."""
        group_of = spec.group_of()
        if slot.role == "root":
            return v[:, 1 + slot.index], v[:, 0]
        if slot.role == "global":
            return u[:, slot.index], v[:, 0]
        if slot.role == "group":
            i = slot.index
            if spec.kind is FactorKind.NESTED_FACTOR:
                return u[:, i], v[:, 1 + group_of[i]]
            return self._conditioned(chosen[i], u[:, i], v[:, 0]), v[:, 1 + group_of[i]]
        edge = spec.edges[slot.index]
        return (
            self._conditioned(chosen[edge.j], u[:, edge.j], v[:, 0]),
            self._conditioned(chosen[edge.k], u[:, edge.k], v[:, 0]),
        )

    @staticmethod
    def _conditioned(cop: BivariateCopula, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return biv.hfunc(
                cop.family, biv.theta_tensor(cop), torch.as_tensor(x), torch.as_tensor(v)
            ).numpy()

    def reselect_links(
        self,
        spec: FactorModelSpec,
        u: np.ndarray,
        latent: np.ndarray,
        cfg: SelectionConfig,
        iteration: int = 1,
    ) -> Tuple[List[BivariateCopula], List[SelectionAuditRow]]:
        """One pass of per-link family choice with the latent path held fixed."""
        chosen: List[BivariateCopula] = []
        audit: List[SelectionAuditRow] = []
        for slot in spec.slots():
            a, b = self._pair_for_slot(slot, spec, u, latent, chosen)
            best, fits = self.select_pair_family(
                a, b, cfg.candidates, cfg.tie_margin, nonnegative=slot.nonnegative
            )
            chosen.append(best.copula)
            audit += [
                SelectionAuditRow(
                    iteration=iteration,
                    link=slot.label,
                    family=f.family,
                    log_likelihood=f.log_likelihood,
                    n_params=f.n_params,
                    bic=f.bic,
                    selected=f is best,
                )
                for f in fits
            ]
        return chosen, audit

    def select_link_families(
        self, data: DataLike, skeleton: FactorModelSpec, cfg: Optional[SelectionConfig] = None
    ) -> SelectionResult:
        """
        Start from all-Gaussian links, then alternate VB fits and per-link BIC
        choices until no family changes, a refit would raise the model BIC,
        or the iteration cap is hit.

        Args:
            data: PIT panel or (T, d) matrix
            skeleton: Structure whose families are ignored
            cfg: Selection settings

        Returns:
            SelectionResult with the final fitted spec and the audit log
        """
        cfg = cfg or SelectionConfig.from_settings()
        u = as_matrix(data)
        spec = skeleton.with_links([_GAUSSIAN_START] * len(skeleton.slots()))
        audit: List[SelectionAuditRow] = []
        result = vb_service.fit(spec, u, cfg.vb)
        summary = vb_service.posterior_summaries(result.posterior)
        fitted = vb_service.median_spec(result.posterior, summary)
        bic_path = [self.compute_bic(fitted, u).bic]
        iteration = 0
        for iteration in range(1, cfg.max_iterations + 1):
            chosen, rows = self.reselect_links(fitted, u, summary.latent_array(), cfg, iteration)
            audit += rows
            changed = [
                s.label for s, old, new in zip(fitted.slots(), fitted.links(), chosen)
                if old.family is not new.family
            ]
            logger.info(
                f"Selection iteration {iteration} ({skeleton.kind.value}): {len(changed)} links changed"
            )
            if not changed:
                break
            trial = vb_service.fit(fitted.with_links(chosen), u, cfg.vb)
            trial_summary = vb_service.posterior_summaries(trial.posterior)
            trial_spec = vb_service.median_spec(trial.posterior, trial_summary)
            trial_bic = self.compute_bic(trial_spec, u).bic
            if trial_bic > bic_path[-1]:
                logger.info(
                    f"Selection iteration {iteration} rejected: model BIC {trial_bic:.3f} "
                    f"above {bic_path[-1]:.3f}"
                )
                break
            result, summary, fitted = trial, trial_summary, trial_spec
            bic_path.append(trial_bic)

        return SelectionResult(
            spec=fitted,
            audit=audit,
            iterations=iteration,
            fit=result,
            summary=summary,
            bic_path=bic_path,
        )

    # Factor-vine second level

    @staticmethod
    def maximum_spanning_tree(weights: np.ndarray) -> List[Tuple[int, int]]:
        """Kruskal on a symmetric weight matrix; returns edges (i, j) with i < j."""
        d = weights.shape[0]
        heap = [(-weights[i, j], i, j) for i in range(d) for j in range(i + 1, d)]
        heapq.heapify(heap)
        parent = list(range(d))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        tree = []
        while heap and len(tree) < d - 1:
            _, i, j = heapq.heappop(heap)
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj
                tree.append((i, j))
        return tree

    def build_level2_vine(
        self,
        data: DataLike,
        level1: FactorModelSpec,
        latent_v0: np.ndarray,
        cfg: Optional[SelectionConfig] = None,
    ) -> List[VineEdge]:
        """
        Maximum spanning tree on |Kendall tau| of the v0-conditioned
        pseudo-observations, with each edge family chosen by pair BIC.
        """
        cfg = cfg or SelectionConfig.from_settings()
        u = as_matrix(data)
        pseudo = np.column_stack(
            [self._conditioned(level1.global_links[i], u[:, i], latent_v0) for i in range(level1.n_vars)]
        )
        d = pseudo.shape[1]
        weights = np.zeros((d, d))
        for i in range(d):
            for j in range(i + 1, d):
                weights[i, j] = weights[j, i] = abs(kendalltau(pseudo[:, i], pseudo[:, j])[0])
        edges = []
        for i, j in self.maximum_spanning_tree(weights):
            best, _ = self.select_pair_family(pseudo[:, i], pseudo[:, j], cfg.candidates, cfg.tie_margin)
            edges.append(VineEdge(j=i, k=j, copula=best.copula))
        return edges

    def fit_factor_vine(self, data: DataLike, cfg: Optional[SelectionConfig] = None) -> SelectionResult:
        """Level-1 selection, level-2 tree construction, then a joint VB fit."""
        cfg = cfg or SelectionConfig.from_settings()
        u = as_matrix(data)
        d = u.shape[1]
        level1 = self.select_link_families(u, FactorModelSpec.skeleton(FactorKind.ONE_FACTOR, d), cfg)
        latent = level1.summary.latent_array()[:, 0]
        edges = self.build_level2_vine(u, level1.spec, latent, cfg)
        spec = FactorModelSpec(
            kind=FactorKind.FACTOR_VINE, n_vars=d, global_links=level1.spec.global_links, edges=edges
        )
        result = vb_service.fit(spec, u, cfg.vb)
        summary = vb_service.posterior_summaries(result.posterior)
        return SelectionResult(
            spec=vb_service.median_spec(result.posterior, summary),
            audit=level1.audit,
            iterations=level1.iterations,
            fit=result,
            summary=summary,
            bic_path=level1.bic_path,
        )

    def fit_model(
        self,
        kind: FactorKind,
        data: DataLike,
        groups: Optional[GroupPartition] = None,
        cfg: Optional[SelectionConfig] = None,
        frozen: Optional[FactorModelSpec] = None,
    ) -> SelectionResult:
        """Select and fit one architecture, or refit frozen families only."""
        cfg = cfg or SelectionConfig.from_settings()
        u = as_matrix(data)
        if frozen is not None:
            result = vb_service.fit(frozen, u, cfg.vb)
            summary = vb_service.posterior_summaries(result.posterior)
            return SelectionResult(
                spec=vb_service.median_spec(result.posterior, summary),
                audit=[], iterations=0, fit=result, summary=summary,
            )
        if kind is FactorKind.FACTOR_VINE:
            return self.fit_factor_vine(u, cfg)
        skeleton = FactorModelSpec.skeleton(kind, u.shape[1], groups=groups)
        return self.select_link_families(u, skeleton, cfg)

    # Whole-model scoring

    def compute_bic(self, spec: FactorModelSpec, data: DataLike) -> ModelScore:
        """Integrated log-likelihood over all rows; only copula parameters are counted."""
        u = torch.as_tensor(as_matrix(data), dtype=DTYPE)
        loglik = float(FactorCopula(spec).integrated_log_density(u).sum())
        return ModelScore(log_likelihood=loglik, n_params=spec.n_params, n_obs=u.shape[0])


selection_service = SelectionService()
