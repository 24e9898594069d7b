"""
Pydantic schemas describing the five factor-copula architectures.
"""

import hashlib
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, field_validator, model_validator

from app.schemas.copula import BivariateCopula, CopulaFamily


class FactorKind(str, Enum):
    ONE_FACTOR = "one_factor"
    TWO_FACTOR = "two_factor"
    BI_FACTOR = "bi_factor"
    NESTED_FACTOR = "nested_factor"
    FACTOR_VINE = "factor_vine"

    @property
    def needs_groups(self) -> bool:
        return self in (FactorKind.BI_FACTOR, FactorKind.NESTED_FACTOR)


class GroupPartition(BaseModel):
    """Disjoint, covering, nonempty groups of 0-based bank indices."""

    groups: List[List[int]]

    @model_validator(mode="after")
    def check_partition(self) -> "GroupPartition":
        members = [i for g in self.groups for i in g]
        if any(len(g) == 0 for g in self.groups):
            raise ValueError("every group must be nonempty")
        if len(set(members)) != len(members):
            raise ValueError("groups must be disjoint")
        if sorted(members) != list(range(len(members))):
            raise ValueError("groups must cover 0..d-1")
        return self

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> List[int]:
        return [len(g) for g in self.groups]

    @property
    def n_vars(self) -> int:
        return sum(self.sizes)

    def membership(self) -> List[int]:
        """Group index of each variable."""
        out = [0] * self.n_vars
        for g, members in enumerate(self.groups):
            for i in members:
                out[i] = g
        return out

    def leaders(self) -> List[int]:
        """First (lowest-index) member of each group."""
        return [min(g) for g in self.groups]


class VineEdge(BaseModel):
    j: int
    k: int
    conditioning: List[int] = []
    copula: BivariateCopula

    @model_validator(mode="after")
    def check_nodes(self) -> "VineEdge":
        if self.j == self.k:
            raise ValueError("vine edge needs two distinct conditioned nodes")
        if self.j in self.conditioning or self.k in self.conditioning:
            raise ValueError("conditioned nodes cannot sit in the conditioning set")
        return self

    @property
    def level(self) -> int:
        """Vine tree level above the factor tree (1 = first tree on pseudo-observations)."""
        return len(self.conditioning) + 1

    @property
    def nodes(self) -> Tuple[int, ...]:
        return tuple(sorted((self.j, self.k)))

    def label(self) -> str:
        cond = ",".join(str(c) for c in self.conditioning)
        return f"edge({self.j},{self.k}|{cond})" if cond else f"edge({self.j},{self.k})"


class LinkSlot(BaseModel):
    """Address of one bivariate link inside a FactorModelSpec."""

    role: str  # global | group | root | edge
    index: int
    label: str
    nonnegative: bool = False


class FactorModelSpec(BaseModel):
    """
    A factor-copula architecture with every link copula.

    Latent columns are ordered v0 first, then group factors v1..vG (one group
    factor for the two-factor model).
    """

    kind: FactorKind
    n_vars: int
    groups: Optional[GroupPartition] = None
    global_links: List[BivariateCopula] = []
    group_links: List[BivariateCopula] = []
    root_links: List[BivariateCopula] = []
    edges: List[VineEdge] = []
    truncation: int = 1

    @field_validator("n_vars")
    @classmethod
    def positive_dimension(cls, v: int) -> int:
        if v < 1:
            raise ValueError("a model needs at least one variable")
        return v

    @model_validator(mode="after")
    def check_structure(self) -> "FactorModelSpec":
        d = self.n_vars
        kind = self.kind
        if kind.needs_groups:
            if self.groups is None:
                raise ValueError(f"{kind.value} requires a group partition")
            if self.groups.n_vars != d:
                raise ValueError("group partition does not match n_vars")

        expected = {
            FactorKind.ONE_FACTOR: (d, 0, 0),
            FactorKind.TWO_FACTOR: (d, d, 0),
            FactorKind.BI_FACTOR: (d, d, 0),
            FactorKind.NESTED_FACTOR: (0, d, self.groups.n_groups if self.groups else 0),
            FactorKind.FACTOR_VINE: (d, 0, 0),
        }[kind]
        actual = (len(self.global_links), len(self.group_links), len(self.root_links))
        if actual != expected:
            raise ValueError(
                f"{kind.value} expects (global, group, root) links {expected}, got {actual}"
            )
        if kind is FactorKind.FACTOR_VINE:
            from app.models.factor import validate_vine_edges

            validate_vine_edges(self.edges, d, self.truncation)
        elif self.edges:
            raise ValueError(f"{kind.value} does not take vine edges")
        return self

    @property
    def n_latent(self) -> int:
        if self.kind in (FactorKind.ONE_FACTOR, FactorKind.FACTOR_VINE):
            return 1
        if self.kind is FactorKind.TWO_FACTOR:
            return 2
        return 1 + self.groups.n_groups

    def group_of(self) -> List[int]:
        """Group index for each variable (all zero for the two-factor model)."""
        if self.kind is FactorKind.TWO_FACTOR:
            return [0] * self.n_vars
        return self.groups.membership() if self.groups else [0] * self.n_vars

    def member_lists(self) -> List[List[int]]:
        if self.kind is FactorKind.TWO_FACTOR:
            return [list(range(self.n_vars))]
        return [list(g) for g in self.groups.groups] if self.groups else []

    def slots(self) -> List[LinkSlot]:
        """All links in a fixed order: global, group, root, edges."""
        leaders = {min(g) for g in self.member_lists()}
        out = [
            LinkSlot(role="global", index=i, label=f"global[{i}]", nonnegative=(i == 0))
            for i in range(len(self.global_links))
        ]
        out += [
            LinkSlot(role="group", index=i, label=f"group[{i}]", nonnegative=(i in leaders))
            for i in range(len(self.group_links))
        ]
        out += [
            LinkSlot(role="root", index=g, label=f"root[{g}]", nonnegative=(g == 0))
            for g in range(len(self.root_links))
        ]
        out += [
            LinkSlot(role="edge", index=e, label=edge.label())
            for e, edge in enumerate(self.edges)
        ]
        return out

    def link(self, slot: LinkSlot) -> BivariateCopula:
        if slot.role == "global":
            return self.global_links[slot.index]
        if slot.role == "group":
            return self.group_links[slot.index]
        if slot.role == "root":
            return self.root_links[slot.index]
        return self.edges[slot.index].copula

    def links(self) -> List[BivariateCopula]:
        return [self.link(s) for s in self.slots()]

    def with_links(self, copulas: List[BivariateCopula]) -> "FactorModelSpec":
        """Copy with links replaced in ``slots()`` order."""
        slots = self.slots()
        if len(copulas) != len(slots):
            raise ValueError("link count does not match the structure")
        update: Dict[str, list] = {
            "global_links": list(self.global_links),
            "group_links": list(self.group_links),
            "root_links": list(self.root_links),
        }
        edges = list(self.edges)
        for slot, cop in zip(slots, copulas):
            if slot.role == "edge":
                edges[slot.index] = edges[slot.index].model_copy(update={"copula": cop})
            else:
                update[f"{slot.role}_links"][slot.index] = cop
        data = self.model_dump()
        for key, copulas_ in update.items():
            data[key] = [c.model_dump() for c in copulas_]
        data["edges"] = [e.model_dump() for e in edges]
        return type(self).model_validate(data)

    @property
    def n_params(self) -> int:
        return sum(c.family.n_params for c in self.links())

    @classmethod
    def skeleton(
        cls,
        kind: FactorKind,
        n_vars: int,
        groups: Optional[GroupPartition] = None,
        edges: Optional[List[VineEdge]] = None,
        link: Optional[BivariateCopula] = None,
    ) -> "FactorModelSpec":
        """Structure with every link set to the same copula (Gaussian tau 0.3 by default)."""
        link = link or BivariateCopula(family=CopulaFamily.GAUSSIAN, theta=(0.45399049973954675,))
        n_groups = groups.n_groups if groups else 0
        counts = {
            FactorKind.ONE_FACTOR: (n_vars, 0, 0),
            FactorKind.TWO_FACTOR: (n_vars, n_vars, 0),
            FactorKind.BI_FACTOR: (n_vars, n_vars, 0),
            FactorKind.NESTED_FACTOR: (0, n_vars, n_groups),
            FactorKind.FACTOR_VINE: (n_vars, 0, 0),
        }[kind]
        return cls(
            kind=kind,
            n_vars=n_vars,
            groups=groups if kind.needs_groups else None,
            global_links=[link] * counts[0],
            group_links=[link] * counts[1],
            root_links=[link] * counts[2],
            edges=edges or [],
        )

    def to_document(self) -> str:
        """Stable JSON model file."""
        return self.model_dump_json(indent=2) + "\n"

    @classmethod
    def from_document(cls, text: str) -> "FactorModelSpec":
        return cls.model_validate_json(text)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_document().encode()).hexdigest()[:16]
