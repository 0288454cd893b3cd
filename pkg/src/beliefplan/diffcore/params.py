"""Named, shaped parameter storage shared by every model family."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError


@dataclass
class ParamBlock:
    """One named learnable array. ``values`` is always float64."""

    name: str
    shape: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = math.prod(self.shape) if self.shape else 1
        if self.values.size != expected:
            raise DimensionError(
                f"block {self.name!r}: shape {self.shape} needs {expected} "
                f"values, got {self.values.size}"
            )
        self.values = self.values.reshape(self.shape)


class ParameterSet:
    """Ordered collection of uniquely named ParamBlocks."""

    def __init__(self, blocks: list[ParamBlock] | None = None):
        self._blocks: dict[str, ParamBlock] = {}
        for b in blocks or []:
            self.add(b)

    def add(self, block: ParamBlock):
        if block.name in self._blocks:
            raise DimensionError(f"duplicate block name {block.name!r}")
        self._blocks[block.name] = block

    def __contains__(self, name: str) -> bool:
        return name in self._blocks

    def __getitem__(self, name: str) -> ParamBlock:
        try:
            return self._blocks[name]
        except KeyError:
            raise DimensionError(f"unknown block {name!r}") from None

    def __iter__(self):
        return iter(self._blocks.values())

    def __len__(self):
        return len(self._blocks)

    def names(self) -> list[str]:
        return list(self._blocks)

    def subset(self, prefix: str) -> "ParameterSet":
        """Blocks whose name starts with ``prefix`` (shared arrays, not copies)."""
        return ParameterSet([b for b in self if b.name.startswith(prefix)])

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            [ParamBlock(b.name, b.shape, b.values.copy()) for b in self]
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([b.values.ravel() for b in self]) if len(self) else np.zeros(0)

    def zeros_like(self) -> "GradientSet":
        return {b.name: np.zeros(b.shape) for b in self}

    def merged_with(self, other: "ParameterSet") -> "ParameterSet":
        out = ParameterSet(list(self))
        for b in other:
            out.add(b)
        return out


GradientSet = dict  # name -> ndarray, shape-congruent with the owning set


def check_congruent(params: ParameterSet, grads: GradientSet):
    for b in params:
        g = grads.get(b.name)
        if g is None or g.shape != b.values.shape:
            raise DimensionError(
                f"gradient for block {b.name!r} missing or shape-mismatched"
            )


@dataclass
class MlpSpec:
    """Dense-network layout: sizes[0] -> ... -> sizes[-1].

    Hidden layers are affine -> layer norm -> activation; the output layer is
    a plain affine, optionally squashed by tanh.
    """

    prefix: str
    sizes: tuple[int, ...]
    hidden_act: str = "mish"  # "mish" | "relu"
    out_tanh: bool = False
    out_scale: float = 1.0

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise DimensionError(f"{self.prefix}: need at least in/out sizes")
        if self.hidden_act not in ("mish", "relu"):
            raise DimensionError(f"{self.prefix}: unknown activation {self.hidden_act!r}")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def block_names(self) -> list[str]:
        names = []
        for i in range(self.n_layers):
            names += [f"{self.prefix}.w{i}", f"{self.prefix}.b{i}"]
            if i < self.n_layers - 1:
                names += [f"{self.prefix}.g{i}", f"{self.prefix}.n{i}"]
        return names

    def init_blocks(self, rng: np.random.Generator) -> list[ParamBlock]:
        blocks = []
        for i in range(self.n_layers):
            din, dout = self.sizes[i], self.sizes[i + 1]
            scale = 1.0 / math.sqrt(din)
            last = i == self.n_layers - 1
            if last:
                scale *= self.out_scale
            w = rng.normal(0.0, scale, size=(din, dout))
            blocks.append(ParamBlock(f"{self.prefix}.w{i}", (din, dout), w))
            blocks.append(ParamBlock(f"{self.prefix}.b{i}", (dout,), np.zeros(dout)))
            if not last:
                blocks.append(ParamBlock(f"{self.prefix}.g{i}", (dout,), np.ones(dout)))
                blocks.append(ParamBlock(f"{self.prefix}.n{i}", (dout,), np.zeros(dout)))
        return blocks
