"""Graph construction, linking rules, and single-pass negotiation."""

import pytest

from tenstream.errors import (BadProperty, DirectionError, DuplicateName,
                              PadOccupied, UnknownKind, UnknownPad)
from tenstream.graph import PipelineGraph
from tenstream.tensors import DataType, TensorSpec, parse_any_spec

SRC_PROPS = {"dim": "1:1:8:1", "type": "float32", "frames": "4"}


def pipeline_pair():
    g = PipelineGraph()
    g.add_element("synthetic_src", "s", SRC_PROPS)
    g.add_element("counting_sink", "k")
    return g


class TestConstruction:
    def test_auto_names_count_up(self):
        g = PipelineGraph()
        assert g.add_element("queue").name == "queue0"
        assert g.add_element("queue").name == "queue1"

    def test_duplicate_name_rejected(self):
        g = PipelineGraph()
        g.add_element("queue", "q")
        with pytest.raises(DuplicateName):
            g.add_element("tee", "q")

    def test_unknown_kind(self):
        with pytest.raises(UnknownKind):
            PipelineGraph().add_element("flux_capacitor")

    def test_aliases_resolve_to_the_same_kind(self):
        g = PipelineGraph()
        assert g.add_element("fakesink").kind.KIND == "counting_sink"
        assert g.add_element("tensor_trans",
                             props={"mode": "stand"}).kind.KIND == \
            "tensor_transform"

    def test_missing_required_property(self):
        with pytest.raises(BadProperty):
            PipelineGraph().add_element("tensor_filter",
                                        props={"framework": "toy"})

    def test_unknown_property_key(self):
        with pytest.raises(BadProperty):
            PipelineGraph().add_element("queue", props={"depth": "3"})

    def test_property_coercion(self):
        g = PipelineGraph()
        desc = g.add_element("synthetic_src", "s", SRC_PROPS)
        assert desc.props["dim"] == (1, 1, 8, 1)
        assert desc.props["type"] is DataType.float32
        assert desc.props["frames"] == 4

    def test_element_lookup(self):
        g = pipeline_pair()
        assert g.element("s").name == "s"
        with pytest.raises(UnknownPad):
            g.element("nobody")


class TestLinking:
    def test_by_name_picks_free_static_pads(self):
        g = pipeline_pair()
        link = g.link("s", "k")
        assert link.src == ("s", "src")
        assert link.sink == ("k", "sink")

    def test_request_pads_are_created_on_demand(self):
        g = pipeline_pair()
        g.add_element("tensor_mux", "m")
        first = g.link("s", "m")
        assert first.sink == ("m", "sink_0")
        g.add_element("synthetic_src", "s2", SRC_PROPS)
        second = g.link("s2", ("m", "sink_5"))
        assert second.sink == ("m", "sink_5")
        assert "sink_5" in g.element("m").pads

    def test_double_link_is_rejected(self):
        g = pipeline_pair()
        g.link("s", "k")
        g.add_element("counting_sink", "k2")
        with pytest.raises(PadOccupied):
            g.link("s", "k2")

    def test_direction_is_enforced(self):
        g = pipeline_pair()
        with pytest.raises(DirectionError):
            g.link(("k", "sink"), "s")
        with pytest.raises(DirectionError):
            g.link(("s", "src"), ("s", "src"))

    def test_unknown_pad_name(self):
        g = pipeline_pair()
        with pytest.raises(UnknownPad):
            g.link(("s", "bogus"), "k")

    def test_link_filter_conflict_surfaces_at_validate(self):
        g = PipelineGraph()
        g.add_element("video_testsrc", "cam",
                      {"width": "8", "height": "8", "frames": "1"})
        g.add_element("counting_sink", "k")
        # pads advertise no constraints, so the link itself is accepted ...
        g.link("cam", "k", TensorSpec((1, 1, 4, 1), DataType.float32))
        result = g.validate()
        # ... and the video-vs-tensor conflict is a validation diagnostic
        assert not result.ok
        assert any(d.code == "IncompatibleSpecs" and d.element == "cam"
                   for d in result.diagnostics)

    def test_remove_link(self):
        g = pipeline_pair()
        link = g.link("s", "k")
        g.remove_link(link.src, link.sink)
        assert g.links == []
        with pytest.raises(UnknownPad):
            g.remove_link(link.src, link.sink)


class TestValidation:
    def test_simple_chain_negotiates_everywhere(self):
        g = pipeline_pair()
        g.link("s", "k")
        result = g.validate()
        assert result.ok and not result.diagnostics
        expected = TensorSpec((1, 1, 8, 1), DataType.float32)
        assert result.spec_of("s", "src") == expected
        assert result.spec_of("k", "sink") == expected

    def test_validate_is_idempotent_and_side_effect_free(self):
        g = pipeline_pair()
        g.link("s", "k")
        before_links = list(g.links)
        before_pads = {n: set(d.pads) for n, d in g.elements.items()}
        first = g.validate()
        second = g.validate()
        assert first.ok and second.ok
        assert first.specs == second.specs
        assert list(g.links) == before_links
        assert {n: set(d.pads) for n, d in g.elements.items()} == before_pads

    def test_unlinked_pads_are_reported(self):
        g = pipeline_pair()
        g.add_element("tensor_mux", "m")
        g.link("s", "m")  # m.src dangles, k.sink dangles
        result = g.validate()
        assert not result.ok
        codes = {(d.code, d.element, d.pad) for d in result.diagnostics}
        assert ("UnlinkedPad", "m", "src") in codes
        assert ("UnlinkedPad", "k", "sink") in codes

    def test_removing_a_link_orphans_both_pads(self):
        g = pipeline_pair()
        link = g.link("s", "k")
        assert g.validate().ok
        g.remove_link(link.src, link.sink)
        result = g.validate()
        unlinked = [d for d in result.diagnostics if d.code == "UnlinkedPad"]
        assert len(unlinked) == 2

    def test_plain_cycle_is_rejected(self):
        g = pipeline_pair()
        g.link("s", "k")
        g.add_element("queue", "q1")
        g.add_element("queue", "q2")
        g.link("q1", "q2")
        g.link("q2", "q1")
        result = g.validate()
        assert not result.ok
        cycle = [d for d in result.diagnostics if d.code == "IllegalCycle"]
        assert len(cycle) == 1
        assert "q1" in cycle[0].element and "q2" in cycle[0].element

    def test_repo_pair_expresses_a_legal_recurrence(self):
        g = PipelineGraph()
        g.add_element("synthetic_src", "src", SRC_PROPS)
        g.add_element("tensor_merge", "mg", {"dimension": "0"})
        g.add_element("tensor_split", "sp",
                      {"dimension": "0", "sizes": "1,1"})
        g.add_element("tensor_reposink", "back", {"slot": "loop"})
        g.add_element("tensor_reposrc", "again",
                      {"slot": "loop", "dim": "1:1:8:1", "type": "float32"})
        g.add_element("counting_sink", "out")
        g.link("src", ("mg", "sink_0"))
        g.link("again", ("mg", "sink_1"))
        g.link("mg", "sp")
        g.link(("sp", "src_0"), "back")
        g.link(("sp", "src_1"), "out")
        result = g.validate()
        assert result.ok, [str(d) for d in result.diagnostics]
        assert result.spec_of("mg", "src").dim == (2, 1, 8, 1)
        assert result.spec_of("back", "sink").dim == (1, 1, 8, 1)

    def test_repo_slot_spec_conflict_is_reported(self):
        g = PipelineGraph()
        g.add_element("synthetic_src", "src", SRC_PROPS)
        g.add_element("tensor_reposink", "back", {"slot": "loop"})
        g.add_element("tensor_reposrc", "again",
                      {"slot": "loop", "dim": "1:1:9:1", "type": "float32"})
        g.add_element("counting_sink", "out")
        g.link("src", "back")
        g.link("again", "out")
        result = g.validate()
        assert not result.ok
        assert any(d.code == "IncompatibleSpecs" and d.element == "again"
                   for d in result.diagnostics)

    def test_unbalanced_slot_parties(self):
        g = PipelineGraph()
        g.add_element("synthetic_src", "src", SRC_PROPS)
        g.add_element("tensor_reposink", "only", {"slot": "x"})
        g.link("src", "only")
        result = g.validate()
        slot = [d for d in result.diagnostics if d.code == "SlotError"]
        assert len(slot) == 1
        assert "1 sink(s), 0 source(s)" in slot[0].message

    def test_reposrc_without_shape_or_binding_is_unresolved(self):
        g = PipelineGraph()
        g.add_element("tensor_reposrc", "r", {"slot": "x"})
        g.add_element("counting_sink", "k")
        g.link("r", "k")
        result = g.validate()
        assert not result.ok
        codes = {d.code for d in result.diagnostics}
        assert "UnresolvedSpec" in codes

    def test_incompatible_link_specs_are_diagnosed(self):
        g = PipelineGraph()
        g.add_element("synthetic_src", "s", SRC_PROPS)
        g.add_element("counting_sink", "k")
        narrow = parse_any_spec("other/tensor,dimension=1:1:4:1,"
                                "type=float32,framerate=0/1")
        g.link("s", "k", narrow)  # source emits 1:1:8:1
        result = g.validate()
        assert not result.ok
        assert any(d.code == "IncompatibleSpecs" for d in result.diagnostics)

    def test_spec_filter_refines_a_wildcard(self):
        g = PipelineGraph()
        g.add_element("video_testsrc", "cam",
                      {"width": "16", "height": "12", "frames": "2"})
        g.add_element("videoscale", "vs")
        g.add_element("tensor_converter", "conv")
        g.add_element("counting_sink", "k")
        scaled = parse_any_spec("video/x-raw,width=8,height=6,channels=3")
        g.link("cam", "vs")
        g.link("vs", "conv", scaled)
        g.link("conv", "k")
        result = g.validate()
        assert result.ok, [str(d) for d in result.diagnostics]
        assert result.spec_of("vs", "src").width == 8
        assert result.spec_of("conv", "src").dim == (3, 8, 6, 1)

    def test_both_ends_of_every_link_agree(self):
        g = PipelineGraph()
        g.add_element("synthetic_src", "a", SRC_PROPS)
        g.add_element("synthetic_src", "b", SRC_PROPS)
        g.add_element("tensor_mux", "m")
        g.add_element("tensor_demux", "d")
        g.add_element("counting_sink", "x")
        g.add_element("counting_sink", "y")
        g.link("a", ("m", "sink_0"))
        g.link("b", ("m", "sink_1"))
        g.link("m", "d")
        g.link(("d", "src_0"), "x")
        g.link(("d", "src_1"), "y")
        result = g.validate()
        assert result.ok, [str(d) for d in result.diagnostics]
        for link in g.links:
            assert result.specs[link.src] == result.specs[link.sink]
