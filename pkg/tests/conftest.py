"""Shared fixtures: trained interaction archetypes and labeled table scenes.

Training runs a distance field over a 64-cube grid per pair, so everything
here is session-scoped and shared by the module tests and the acceptance
suite alike.
"""

import numpy as np
import pytest

from afford.geometry import transform
from afford.ibs import IbsParams, prune_ibs, sample_ibs
from afford.jsonio import write_canonical
from afford.ply import save_ply
from afford.synth import ARCHETYPES, TableParams, make_table_scene, make_training_pair
from afford.tensor import (
    compute_provenance,
    derive_anchor,
    save_descriptor,
    train_report,
)


class TrainedArchetype:
    """One training pair, its trained descriptor, and the full tensor behind it.

    The tensor is rebuilt from the public pipeline pieces rather than pulled
    out of train_report, so descriptor contents can be cross-checked against
    an independently assembled source.
    """

    def __init__(self, kind: str):
        self.kind = kind
        self.query, self.scene, self.pose = make_training_pair(kind)
        self.descriptor, self.stats = train_report(
            self.query, self.scene, self.pose,
            name=f"{kind}-fixture",
            query_file=f"{kind}_query.ply",
            scene_file=f"{kind}_scene.ply",
        )
        self.posed = transform(self.query, self.pose)
        params = IbsParams()
        samples = sample_ibs(self.posed, self.scene, params)
        kept = prune_ibs(samples, self.posed, params)
        tensor = compute_provenance(kept, self.posed, self.scene)
        self.tensor = tensor.subset((tensor.pv_scene ** 2).sum(axis=1) > 0.0)
        self.anchor = derive_anchor(self.tensor)
        self.query_diag = self.posed.diagonal()


@pytest.fixture(scope="session")
def archetypes():
    return {kind: TrainedArchetype(kind) for kind in ARCHETYPES}


@pytest.fixture(scope="session")
def place(archetypes):
    return archetypes["place"]


@pytest.fixture(scope="session")
def table200():
    """Labeled table scene whose lattice spacing matches the training pairs."""
    return make_table_scene(TableParams(density=200.0), seed=1)


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory, archetypes, table200):
    """On-disk fixture files for CLI and service tests."""
    root = tmp_path_factory.mktemp("artifacts")
    p = archetypes["place"]
    save_ply(p.query, root / "place_query.ply")
    save_ply(p.scene, root / "place_scene.ply")
    write_canonical(
        {"rotation": p.pose.rotation, "translation": p.pose.translation},
        root / "place_pose.json",
    )
    save_descriptor(p.descriptor, root / "place.json")
    save_ply(table200.cloud, root / "table.ply")
    return root
