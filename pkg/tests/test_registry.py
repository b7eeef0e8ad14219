import pytest

from coalsim.federation import PolicyContext
from coalsim.registry import (
    Registry,
    RegistryError,
    SensitivityLevel,
    coalition_catalog,
    deregister,
    query,
    register,
)
from coalsim.topology import Tier

from conftest import descriptor


def test_sensitivity_is_totally_ordered():
    assert SensitivityLevel.UNCLASSIFIED < SensitivityLevel.RESTRICTED < SensitivityLevel.SECRET


def test_register_into_empty_registry():
    result = register(Registry("p1"), descriptor())
    assert len(result.registry) == 1
    assert not result.replaced


def test_register_secret_model_outside_cloud_rejected():
    secret = descriptor(sensitivity=SensitivityLevel.SECRET, tiers=(Tier.EDGE,))
    with pytest.raises(RegistryError, match="enclave-only"):
        register(Registry("p1"), secret)


def test_register_partner_mismatch():
    with pytest.raises(RegistryError, match="belongs to"):
        register(Registry("p2"), descriptor(partner_id="p1"))


def test_reregistration_replaces():
    reg = register(Registry("p1"), descriptor(compute=1)).registry
    result = register(reg, descriptor(compute=2))
    assert len(result.registry) == 1
    assert result.replaced
    assert result.registry.get("m1").footprint.compute == 2


def test_deregister():
    reg = register(Registry("p1"), descriptor()).registry
    assert len(deregister(reg, "m1")) == 0
    with pytest.raises(RegistryError):
        deregister(reg, "missing")


def test_query_empty_registry():
    assert query(Registry("p1"), "cap-a", SensitivityLevel.SECRET) == []


def test_query_filters_by_sensitivity_lattice():
    reg = Registry("p1")
    reg = register(reg, descriptor("m1", capabilities=("radar",), sensitivity=SensitivityLevel.RESTRICTED)).registry
    reg = register(
        reg,
        descriptor("m2", capabilities=("radar",), sensitivity=SensitivityLevel.SECRET, tiers=(Tier.CLOUD,)),
    ).registry
    hits = query(reg, "radar", SensitivityLevel.RESTRICTED)
    assert [d.model_id for d in hits] == ["m1"]


def test_query_sort_order():
    reg = Registry("p1")
    reg = register(reg, descriptor("m-big", compute=2)).registry
    reg = register(reg, descriptor("m-small", compute=1)).registry
    hits = query(reg, "cap-a", SensitivityLevel.SECRET)
    assert [d.model_id for d in hits] == ["m-small", "m-big"]


def test_query_is_monotone_in_the_lattice():
    reg = Registry("p1")
    for i, level in enumerate(SensitivityLevel):
        tiers = (Tier.CLOUD,) if level is SensitivityLevel.SECRET else (Tier.EDGE, Tier.CLOUD)
        reg = register(reg, descriptor(f"m{i}", capabilities=("cap",), sensitivity=level, tiers=tiers)).registry
    seen = {}
    for level in SensitivityLevel:
        seen[level] = {d.model_id for d in query(reg, "cap", level)}
    assert seen[SensitivityLevel.UNCLASSIFIED] <= seen[SensitivityLevel.RESTRICTED] <= seen[SensitivityLevel.SECRET]


def test_registered_releasable_model_appears_in_query():
    reg = register(Registry("p1"), descriptor()).registry
    hits = query(reg, "cap-a", SensitivityLevel.SECRET)
    assert [d.model_id for d in hits] == ["m1"]
    assert reg.get("m1") is hits[0]


# -- coalition catalog -------------------------------------------------------


def open_policy():
    return PolicyContext()


def test_catalog_self_access_sees_everything():
    reg = register(Registry("p1"), descriptor()).registry
    catalog = coalition_catalog([reg], "p1", open_policy())
    assert [d.model_id for d in catalog] == ["m1"]


def test_catalog_hides_unreleasable_models():
    reg = register(Registry("p1"), descriptor(sensitivity=SensitivityLevel.RESTRICTED)).registry
    assert coalition_catalog([reg], "p2", open_policy()) == []
    policy = PolicyContext({("p1", SensitivityLevel.RESTRICTED): {"p2"}})
    assert [d.model_id for d in coalition_catalog([reg], "p2", policy)] == ["m1"]


def test_catalog_merges_and_orders():
    reg1 = Registry("p1")
    for mid in ("m-b", "m-a"):
        reg1 = register(reg1, descriptor(mid)).registry
    reg2 = Registry("p2")
    for mid in ("m-z", "m-y", "m-x"):
        reg2 = register(reg2, descriptor(mid, partner_id="p2")).registry
    policy = PolicyContext(
        {
            ("p1", SensitivityLevel.UNCLASSIFIED): {"p1", "p2"},
            ("p2", SensitivityLevel.UNCLASSIFIED): {"p1", "p2"},
        }
    )
    catalog = coalition_catalog([reg2, reg1], "p1", policy)
    assert [d.model_id for d in catalog] == ["m-a", "m-b", "m-x", "m-y", "m-z"]


def test_catalog_rejects_duplicate_partner():
    reg = register(Registry("p1"), descriptor()).registry
    with pytest.raises(RegistryError, match="duplicate registry"):
        coalition_catalog([reg, reg], "p1", open_policy())
