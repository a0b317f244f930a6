"""Configuration parsing, validation and variant taxonomy."""

import json

import pytest

from hmgp.config import (
    HARMONIZATION_KINDS,
    SCHEMA_VERSION,
    VARIANTS,
    HarmonizationSpec,
    ModelConfig,
    OptimOptions,
    SemanticConstraints,
    config_from_dict,
    has_semantic_terms,
    is_harmonized,
    is_similarity_based,
    load_config,
    normalize_variant,
)
from hmgp.errors import ConfigError


def minimal_doc(**extra):
    doc = {"schema_version": SCHEMA_VERSION, "variant": "mGPLVM", "q": 3}
    doc.update(extra)
    return doc


def test_variant_taxonomy():
    assert [is_harmonized(v) for v in VARIANTS] == [False, True, False, True, False, True]
    assert is_similarity_based("hm-SimGP") and is_similarity_based("m-RSimGP")
    assert not is_similarity_based("mGPLVM")
    assert has_semantic_terms("hm-RSimGP") and not has_semantic_terms("hm-SimGP")


def test_variant_normalization_tolerates_case_and_separators():
    assert normalize_variant("HM_SIMGP") == "hm-SimGP"
    assert normalize_variant("mgplvm") == "mGPLVM"
    with pytest.raises(ConfigError):
        normalize_variant("gplvm-extreme")


def test_unknown_keys_rejected_by_name():
    with pytest.raises(ConfigError, match="mue"):
        config_from_dict(minimal_doc(mue=0.5))


def test_missing_required_keys_named():
    with pytest.raises(ConfigError, match="q"):
        config_from_dict({"schema_version": SCHEMA_VERSION, "variant": "mGPLVM"})


def test_schema_version_enforced():
    with pytest.raises(ConfigError, match="schema_version"):
        config_from_dict(minimal_doc(schema_version=99))


def test_defaults_applied():
    cfg = config_from_dict(minimal_doc())
    assert cfg.M == 100
    assert cfg.gamma_x == 1.0
    assert cfg.epochs == 1
    assert cfg.inner_iters == 20
    assert cfg.mu == (1.0, 1.0)
    assert cfg.init == "cca"


def test_scalar_mu_broadcasts_and_list_preserved():
    cfg = ModelConfig(variant="hmGPLVM", harmonization="fnorm", q=2, mu=0.25)
    assert cfg.mu == (0.25, 0.25)
    cfg2 = ModelConfig(variant="hmGPLVM", harmonization="fnorm", q=2, mu=[0.1, 0.9])
    assert cfg2.mu == (0.1, 0.9)
    with pytest.raises(ConfigError):
        ModelConfig(variant="hmGPLVM", harmonization="fnorm", q=2, mu=-1.0)


def test_harmonized_variant_requires_kind_and_baseline_rejects_it():
    with pytest.raises(ConfigError, match="harmonization"):
        ModelConfig(variant="hm-SimGP", q=2)
    with pytest.raises(ConfigError, match="does not accept"):
        ModelConfig(variant="m-SimGP", q=2, harmonization="fnorm")
    for kind in HARMONIZATION_KINDS:
        assert ModelConfig(variant="hm-SimGP", q=2, harmonization=kind).harmonization == kind


def test_harmonization_spec_validation():
    with pytest.raises(ConfigError):
        HarmonizationSpec("ridge", (1.0,))
    with pytest.raises(ConfigError):
        HarmonizationSpec("fnorm", (-0.5,))
    spec = ModelConfig(variant="hmGPLVM", harmonization="l21", q=2, mu=2.0).harmonization_spec()
    assert spec.kind == "l21" and spec.weights == (2.0, 2.0)
    assert ModelConfig(variant="mGPLVM", q=2).harmonization_spec() is None


def test_semantic_constraints_validation():
    with pytest.raises(ConfigError, match="overlap"):
        SemanticConstraints(similar_pairs=((0, 1),), dissimilar_pairs=((1, 0),))
    with pytest.raises(ConfigError, match="self-pair"):
        SemanticConstraints(similar_pairs=((2, 2),), dissimilar_pairs=())
    c = SemanticConstraints(similar_pairs=((0, 1),), dissimilar_pairs=((1, 2),))
    with pytest.raises(ConfigError, match="out of range"):
        c.validate_range(2)
    c.validate_range(3)


def test_optim_options_validation():
    with pytest.raises(ConfigError):
        OptimOptions(max_iters=0)
    with pytest.raises(ConfigError):
        OptimOptions(grad_tol=0.0)


def test_numeric_bounds():
    for bad in (
        dict(q=0),
        dict(M=0),
        dict(epochs=0),
        dict(gamma_x=0.0),
        dict(init="tsne"),
        dict(active_policy="grid"),
        dict(inference_starts=0),
    ):
        kwargs = {"variant": "mGPLVM", "q": 2}
        kwargs.update(bad)
        with pytest.raises(ConfigError):
            ModelConfig(**kwargs)


def test_load_config_round_trip_and_errors(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(minimal_doc(variant="hm-SimGP", harmonization="trace", mu=0.5)))
    cfg = load_config(path)
    assert cfg.variant == "hm-SimGP" and cfg.mu == (0.5, 0.5)

    path.write_text("{not json")
    with pytest.raises(ConfigError, match="line 1"):
        load_config(path)

    # to_dict output parses straight back
    doc = cfg.to_dict()
    cfg2 = config_from_dict(doc)
    assert cfg2 == cfg
