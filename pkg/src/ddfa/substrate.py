"""Decoding genomes into concrete 28x28 feature detectors and computing
their activations and per-dataset signatures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import steepened_sigmoid
from .cppn import CppnGenome, evaluate, evaluate_batch
from .dataset import Dataset, Example, IMAGE_SIDE

FEATURE_WEIGHT_SCALE = 3.0  # decoded weights live in [-scale, +scale]

_CENTER = (IMAGE_SIDE - 1) / 2.0  # 13.5; pixel centers map onto [-1, 1]^2


def _grid_coordinates():
    cols, rows = np.meshgrid(np.arange(IMAGE_SIDE), np.arange(IMAGE_SIDE))
    xs = (cols.ravel() - _CENTER) / _CENTER
    ys = (rows.ravel() - _CENTER) / _CENTER
    return xs, ys


_XS, _YS = _grid_coordinates()


@dataclass(frozen=True)
class Provenance:
    """Where a feature came from: search phase, generation, collection slot,
    and the size of the genome that produced it."""

    source: str = ""
    generation: int = -1
    index: int = -1
    nodes: int = 0
    connections: int = 0

    def to_tag(self) -> str:
        return (
            f"source={self.source};gen={self.generation};idx={self.index};"
            f"nodes={self.nodes};conns={self.connections}"
        )

    @staticmethod
    def from_tag(tag: str) -> "Provenance":
        fields = dict(kv.split("=", 1) for kv in tag.split(";") if "=" in kv)
        return Provenance(
            source=fields.get("source", ""),
            generation=int(fields.get("gen", -1)),
            index=int(fields.get("idx", -1)),
            nodes=int(fields.get("nodes", 0)),
            connections=int(fields.get("conns", 0)),
        )


@dataclass
class Feature:
    """A single-layer detector: 784 input weights plus one bias."""

    weights: np.ndarray
    bias: float
    provenance: Provenance = field(default_factory=Provenance)


def decode(
    g: CppnGenome,
    w_feat: float = FEATURE_WEIGHT_SCALE,
    use_bias: bool = True,
) -> Feature:
    """Paint a detector by querying the genome at every pixel center.

    A pixel's connection is expressed only where the gate output L is
    strictly positive; expressed weights are the W output clamped to
    [-1, 1] and scaled by w_feat.  The bias is the B output queried at the
    image center, clamped and scaled the same way.
    """
    w, l, _ = evaluate_batch(g, _XS, _YS)
    weights = np.where(l > 0.0, np.clip(w, -1.0, 1.0) * w_feat, 0.0)
    if use_bias:
        _, _, b0 = evaluate(g, 0.0, 0.0)
        bias = float(np.clip(b0, -1.0, 1.0) * w_feat)
    else:
        bias = 0.0
    prov = Provenance(nodes=g.node_count(), connections=g.enabled_count())
    return Feature(weights, bias, prov)


def activate(f: Feature, e: Example) -> float:
    """Detector response to one example: steepened sigmoid of w.p + b."""
    return float(steepened_sigmoid(np.dot(e.pixels, f.weights) + f.bias))


def signature(f: Feature, d: Dataset) -> np.ndarray:
    """Detector responses over the whole dataset, in dataset order.

    This is the behavior characterization the novelty search compares; it
    is a pure function of (feature, dataset) and is computed by the same
    fixed sequence of array operations no matter how work is scheduled.
    """
    if len(d) == 0:
        raise ValueError("signature requires a nonempty dataset")
    return steepened_sigmoid(d.pixels @ f.weights + f.bias)
