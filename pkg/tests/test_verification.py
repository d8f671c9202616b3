"""Registry completeness and the fast half of the property suite."""

import pytest

from camotta import verification as V

# one entry per Invariants & Properties bullet, by module
EXPECTED_PROPERTIES = [
    "tensor.gradient-battery",
    "tensor.determinism",
    "tensor.broadcast-oracle",
    "spectral.parseval",
    "spectral.linearity",
    "spectral.symmetric-mask-real",
    "spectral.ffl-nonnegative",
    "hrr.zero-iff-perfect",
    "hrr.gradient",
    "hrr.monotone-masking",
    "tag.residual-identity",
    "tag.partition-of-unity",
    "tag.permutation-equivariance",
    "pcc.confidence-sum",
    "pcc.fusion-monotone",
    "pcc.kl-minimum",
    "pcc.gradients",
    "pcc.scale-invariance",
    "model.snapshot-bit-exact",
    "model.no-dead-parameters",
    "model.encoder-shared",
    "pipeline.no-gt-dependence",
    "pipeline.episodic-isolation",
    "pipeline.loss-composition",
    "pipeline.self-supervised-descent",
    "data.degrade-deterministic",
    "data.degrade-bounds",
    "data.metric-bounds",
    "data.monotone-difficulty",
]


def test_registry_complete():
    assert list(V.REGISTRY) == EXPECTED_PROPERTIES


def test_filter_selects_subset():
    results = V.run_property_suite(name_filter="spectral", seed=1)
    assert [r.name for r in results] == [n for n in EXPECTED_PROPERTIES
                                         if "spectral" in n]


def test_result_lines_include_tolerance():
    (r,) = V.run_property_suite(name_filter="pcc.confidence-sum", seed=2)
    line = r.line()
    assert "tol=" in line and "seed=2" in line and line.startswith("PASS")


@pytest.mark.parametrize("name", [n for n in EXPECTED_PROPERTIES
                                  if n not in V.SLOW_PROPERTIES])
def test_fast_properties_pass(name):
    (r,) = V.run_property_suite(name_filter=name, seed=7)
    assert r.passed, r.line()
