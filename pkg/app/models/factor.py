"""
Factor copula densities, pseudo-observations and simulation.

Latent draws are arranged as v[..., 0] = v0 (global/root factor) followed by
group factors. Link parameters may be given per slot as tensors with a trailing
parameter dimension, which lets variational draws broadcast through the same
code that evaluates a fixed model.
"""

from typing import List, Optional, Sequence

import numpy as np
import torch

from app.core.errors import CopulaDomainError, QuadratureError, StructureError
from app.models import bivariate as biv
from app.models.quadrature import LatentQuadrature
from app.schemas.copula import CopulaFamily
from app.schemas.factor import FactorKind, FactorModelSpec, VineEdge

DTYPE = torch.float64


def validate_vine_edges(edges: Sequence[VineEdge], n_vars: int, truncation: int) -> None:
    """Level-1 edges must form a spanning tree; deeper edges obey the proximity condition."""
    if truncation < 1:
        raise StructureError("factor-vine truncation must be at least 1")
    for e in edges:
        nodes = [e.j, e.k, *e.conditioning]
        if min(nodes) < 0 or max(nodes) >= n_vars:
            raise StructureError(f"{e.label()} references a node outside 0..{n_vars - 1}")
        if e.level > truncation:
            raise StructureError(f"{e.label()} lies above truncation level {truncation}")

    first = [e for e in edges if e.level == 1]
    if len(first) != max(n_vars - 1, 0):
        raise StructureError(f"level-1 vine needs {n_vars - 1} edges, got {len(first)}")
    parent = list(range(n_vars))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for e in first:
        rj, rk = find(e.j), find(e.k)
        if rj == rk:
            raise StructureError(f"{e.label()} closes a cycle in the level-1 tree")
        parent[rj] = rk

    for level in range(2, truncation + 1):
        below = {frozenset((e.j, e.k, *e.conditioning)) for e in edges if e.level == level - 1}
        for e in (x for x in edges if x.level == level):
            cond = set(e.conditioning)
            if frozenset({e.j} | cond) not in below or frozenset({e.k} | cond) not in below:
                raise StructureError(f"{e.label()} violates the proximity condition")


class FactorCopula:
    """Evaluator for one FactorModelSpec."""

    def __init__(self, spec: FactorModelSpec, quadrature: Optional[LatentQuadrature] = None):
        self.spec = spec
        self.kind = spec.kind
        self.d = spec.n_vars
        self.group_of = spec.group_of()
        self.members = spec.member_lists()
        self.slots = spec.slots()
        self.families = [c.family for c in spec.links()]
        self.default_thetas = [biv.theta_tensor(c) for c in spec.links()]
        self.quadrature = quadrature or LatentQuadrature.from_settings()
        self._offset = {"global": 0}
        self._offset["group"] = len(spec.global_links)
        self._offset["root"] = self._offset["group"] + len(spec.group_links)
        self._offset["edge"] = self._offset["root"] + len(spec.root_links)
        if self.kind is FactorKind.FACTOR_VINE and any(e.level > 1 for e in spec.edges):
            self._deep_vine = True
        else:
            self._deep_vine = False

    def _pos(self, role: str, index: int) -> int:
        return self._offset[role] + index

    def _link(self, thetas, role, index):
        pos = self._pos(role, index)
        return self.families[pos], thetas[pos]

    def _require_supported(self) -> None:
        if self._deep_vine:
            raise StructureError("factor-vine density is implemented for truncation level 1")

    # Conditional density

    def conditional_log_density(
        self, u: torch.Tensor, v: torch.Tensor, thetas: Optional[List[torch.Tensor]] = None
    ) -> torch.Tensor:
        """
        Sum of link log-densities given the latent factors.

        Args:
            u: Observables, shape (..., d)
            v: Latent values, shape (..., n_latent)
            thetas: Optional per-slot parameter tensors (..., p)

        Returns:
            Tensor of shape broadcast(u[..., 0], v[..., 0])
        """
        self._require_supported()
        th = self.default_thetas if thetas is None else thetas
        total = torch.zeros(torch.broadcast_shapes(u.shape[:-1], v.shape[:-1]), dtype=DTYPE)
        v0 = v[..., 0]

        if self.kind is FactorKind.NESTED_FACTOR:
            for g in range(len(self.members)):
                fam, t = self._link(th, "root", g)
                total = total + biv.log_pdf(fam, t, v[..., 1 + g], v0)
            for i in range(self.d):
                fam, t = self._link(th, "group", i)
                total = total + biv.log_pdf(fam, t, u[..., i], v[..., 1 + self.group_of[i]])
            return total

        pseudo = []
        for i in range(self.d):
            fam, t = self._link(th, "global", i)
            total = total + biv.log_pdf(fam, t, u[..., i], v0)
            if self.kind is not FactorKind.ONE_FACTOR:
                pseudo.append(biv.hfunc(fam, t, u[..., i], v0))

        if self.kind in (FactorKind.TWO_FACTOR, FactorKind.BI_FACTOR):
            for i in range(self.d):
                fam, t = self._link(th, "group", i)
                total = total + biv.log_pdf(fam, t, pseudo[i], v[..., 1 + self.group_of[i]])
        elif self.kind is FactorKind.FACTOR_VINE:
            for e, edge in enumerate(self.spec.edges):
                fam, t = self._link(th, "edge", e)
                total = total + biv.log_pdf(fam, t, pseudo[edge.j], pseudo[edge.k])
        return total

    # Integrated density

    @torch.no_grad()
    def integrated_log_density(self, u: torch.Tensor, chunk: Optional[int] = None) -> torch.Tensor:
        """
        Log copula density with the latent factors integrated out.

        Args:
            u: Rows of observables, shape (d,) or (T, d)
            chunk: Rows evaluated per batch

        Returns:
            Tensor of shape () or (T,)
        """
        self._require_supported()
        single = u.dim() == 1
        rows = u.reshape(-1, self.d)
        if all(f is CopulaFamily.INDEPENDENCE for f in self.families):
            out = torch.zeros(rows.shape[0], dtype=DTYPE)
        else:
            nested = self.kind in (
                FactorKind.TWO_FACTOR, FactorKind.BI_FACTOR, FactorKind.NESTED_FACTOR
            )
            size = chunk or (32 if nested else 512)
            out = torch.cat(
                [self._integrate_rows(rows[s : s + size]) for s in range(0, rows.shape[0], size)]
            )
        if not bool(torch.all(torch.isfinite(out))):
            raise QuadratureError(
                f"{int((~torch.isfinite(out)).sum())} rows produced a non-finite integrated density"
            )
        return out[0] if single else out

    def _integrate_rows(self, u: torch.Tensor) -> torch.Tensor:
        th = self.default_thetas
        quad = self.quadrature
        b = u.shape[0]
        col = [u[:, i, None] for i in range(self.d)]

        if self.kind is FactorKind.NESTED_FACTOR:

            def outer(v0):
                total = torch.zeros_like(v0)
                for g, members in enumerate(self.members):

                    def inner(vg, g=g, members=members):
                        fam, t = self._link(th, "root", g)
                        acc = biv.log_pdf(fam, t, vg, v0[..., None])
                        for i in members:
                            fam_i, t_i = self._link(th, "group", i)
                            acc = acc + biv.log_pdf(fam_i, t_i, col[i][..., None], vg)
                        return acc

                    total = total + quad.log_integral(inner, v0.shape)
                return total

            return quad.log_integral(outer, (b,))

        def outer(v0):
            total = torch.zeros_like(v0)
            pseudo = []
            for i in range(self.d):
                fam, t = self._link(th, "global", i)
                total = total + biv.log_pdf(fam, t, col[i], v0)
                if self.kind is not FactorKind.ONE_FACTOR:
                    pseudo.append(biv.hfunc(fam, t, col[i], v0))
            if self.kind is FactorKind.FACTOR_VINE:
                for e, edge in enumerate(self.spec.edges):
                    fam, t = self._link(th, "edge", e)
                    total = total + biv.log_pdf(fam, t, pseudo[edge.j], pseudo[edge.k])
            elif self.kind is not FactorKind.ONE_FACTOR:
                for members in self.members:

                    def inner(vg, members=members):
                        acc = torch.zeros_like(vg)
                        for i in members:
                            fam_i, t_i = self._link(th, "group", i)
                            acc = acc + biv.log_pdf(fam_i, t_i, pseudo[i][..., None], vg)
                        return acc

                    total = total + quad.log_integral(inner, v0.shape)
            return total

        return quad.log_integral(outer, (b,))

    # Pseudo-observations

    def pseudo_observations(self, u: torch.Tensor, v: torch.Tensor, level: int = 1) -> torch.Tensor:
        """
        Conditioned uniforms along the factor tree.

        Level 1 conditions each variable on the latent it links to directly (v0,
        or its group factor in the nested model). Level 2 conditions on every
        latent of its path (two-factor and bi-factor models).
        """
        th = self.default_thetas
        out = []
        for i in range(self.d):
            if self.kind is FactorKind.NESTED_FACTOR:
                fam, t = self._link(th, "group", i)
                out.append(biv.hfunc(fam, t, u[..., i], v[..., 1 + self.group_of[i]]))
                continue
            fam, t = self._link(th, "global", i)
            p = biv.hfunc(fam, t, u[..., i], v[..., 0])
            if level == 2:
                if self.kind not in (FactorKind.TWO_FACTOR, FactorKind.BI_FACTOR):
                    raise StructureError(f"{self.kind.value} has no second latent level")
                fam, t = self._link(th, "group", i)
                p = biv.hfunc(fam, t, p, v[..., 1 + self.group_of[i]])
            out.append(p)
        return torch.stack(out, dim=-1)

    # Simulation

    @torch.no_grad()
    def simulate(self, n: int, rng: np.random.Generator, return_latent: bool = False):
        """
        Exact simulation: latents first, then inverse h-functions outward.

        Returns:
            (n, d) uniforms, plus the (n, n_latent) latent draws if requested
        """
        self._require_supported()
        th = self.default_thetas
        latent = torch.as_tensor(rng.random((n, self.spec.n_latent)), dtype=DTYPE).clamp(
            biv.EPS, 1.0 - biv.EPS
        )
        w = torch.as_tensor(rng.random((n, self.d)), dtype=DTYPE)
        v0 = latent[:, 0]
        u = torch.empty((n, self.d), dtype=DTYPE)

        if self.kind is FactorKind.NESTED_FACTOR:
            for g in range(len(self.members)):
                fam, t = self._link(th, "root", g)
                latent[:, 1 + g] = biv.hinv(fam, t, latent[:, 1 + g], v0)
            for i in range(self.d):
                fam, t = self._link(th, "group", i)
                u[:, i] = biv.hinv(fam, t, w[:, i], latent[:, 1 + self.group_of[i]])
        else:
            if self.kind in (FactorKind.TWO_FACTOR, FactorKind.BI_FACTOR):
                pseudo = torch.empty_like(w)
                for i in range(self.d):
                    fam, t = self._link(th, "group", i)
                    pseudo[:, i] = biv.hinv(fam, t, w[:, i], latent[:, 1 + self.group_of[i]])
            elif self.kind is FactorKind.FACTOR_VINE:
                pseudo = self._simulate_tree(w)
            else:
                pseudo = w
            for i in range(self.d):
                fam, t = self._link(th, "global", i)
                u[:, i] = biv.hinv(fam, t, pseudo[:, i], v0)

        u = u.numpy()
        return (u, latent.numpy()) if return_latent else u

    def _simulate_tree(self, w: torch.Tensor) -> torch.Tensor:
        """Sample the level-1 vine on pseudo-observations by walking the tree from node 0."""
        adjacency = {i: [] for i in range(self.d)}
        for e, edge in enumerate(self.spec.edges):
            adjacency[edge.j].append(e)
            adjacency[edge.k].append(e)
        pseudo = w.clone()
        seen = {0}
        frontier = [0]
        while frontier:
            node = frontier.pop()
            for e in adjacency[node]:
                edge = self.spec.edges[e]
                child = edge.k if edge.j == node else edge.j
                if child in seen:
                    continue
                cop = edge.copula if child == edge.j else biv.transpose(edge.copula)
                pseudo[:, child] = biv.hinv(
                    cop.family, biv.theta_tensor(cop), w[:, child], pseudo[:, node]
                )
                seen.add(child)
                frontier.append(child)
        return pseudo


def _check_interior(*values) -> None:
    for value in values:
        t = biv.as_tensor(value)
        if not bool(torch.all((t > 0.0) & (t < 1.0))):
            raise CopulaDomainError("factor copula arguments must lie strictly inside (0, 1)")


def conditional_log_density(spec: FactorModelSpec, u_row, v) -> float:
    _check_interior(u_row, v)
    return float(FactorCopula(spec).conditional_log_density(biv.as_tensor(u_row), biv.as_tensor(v)))


def integrated_log_density(
    spec: FactorModelSpec, u_row, quadrature: Optional[LatentQuadrature] = None
) -> torch.Tensor:
    _check_interior(u_row)
    return FactorCopula(spec, quadrature).integrated_log_density(biv.as_tensor(u_row))


def pseudo_observations(spec: FactorModelSpec, u_row, v, level: int = 1) -> np.ndarray:
    _check_interior(u_row, v)
    with torch.no_grad():
        out = FactorCopula(spec).pseudo_observations(biv.as_tensor(u_row), biv.as_tensor(v), level)
    return out.numpy()


def simulate(spec: FactorModelSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    return FactorCopula(spec).simulate(n, rng)
