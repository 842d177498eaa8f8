import random

import pytest

from hierion import osdspec
from hierion.osdspec import (
    Oamo,
    OsdSpec,
    OsdSpecError,
    OsdSpecParseError,
    OsdSpecValidationError,
    Osmo,
    QueryControls,
    Widget,
    parse_osdspec,
    serialize_osdspec,
    validate,
)


def minimal_spec():
    return OsdSpec(oamos=[Oamo(name="a", osmos=[Osmo(name="m", query_requests=["q0"])])])


class TestParse:
    def test_sample_document_structure(self, service_xml):
        spec = parse_osdspec(service_xml)
        assert len(spec.oamos) == 1
        oamo = spec.oamos[0]
        assert oamo.name == "name0"
        assert len(oamo.osmos) == 1
        osmo = oamo.osmos[0]
        assert osmo.name == "name1"
        assert osmo.query_controls.report_if_empty is False
        assert osmo.query_controls.query_schedule is None
        assert len(osmo.widgets) == 2
        assert all(w.widget_id == "http://www.oxygenxml.com/" for w in osmo.widgets)
        assert [len(w.attributes) for w in osmo.widgets] == [2, 2]
        assert osmo.widgets[0].attributes == [("name2", "value0"), ("name3", "value1")]
        assert osmo.query_requests == ["query0", "query1"]

    def test_minimal_document_defaults(self):
        spec = parse_osdspec(serialize_osdspec(minimal_spec()))
        assert spec.oamos[0].osmos[0].query_controls.report_if_empty is False
        assert spec.oamos[0].osmos[0].widgets == []

    def test_bad_boolean_rejected(self, service_xml):
        bad = service_xml.replace(
            "<osd:reportIfEmpty>false</osd:reportIfEmpty>",
            "<osd:reportIfEmpty>maybe</osd:reportIfEmpty>",
        )
        with pytest.raises(OsdSpecValidationError) as exc:
            parse_osdspec(bad)
        assert any("reportIfEmpty" in v for v in exc.value.violations)

    def test_malformed_xml_carries_location(self):
        with pytest.raises(OsdSpecParseError) as exc:
            parse_osdspec("<osd:OSDSpec")
        assert exc.value

    def test_unknown_namespace_rejected(self, service_xml):
        bad = service_xml.replace(
            "<osd:OAMO name=\"name0\">",
            "<osd:OAMO name=\"name0\"><evil xmlns=\"http://evil.example/\"/>",
        )
        with pytest.raises(OsdSpecValidationError) as exc:
            parse_osdspec(bad)
        assert any("unknown namespace" in v for v in exc.value.violations)

    def test_missing_osmo_rejected(self):
        doc = (
            '<?xml version="1.0"?>'
            '<osd:OSDSpec xmlns:osd="http://www.openiot.eu/osdspec">'
            '<osd:OAMO name="a"></osd:OAMO></osd:OSDSpec>'
        )
        with pytest.raises(OsdSpecValidationError):
            parse_osdspec(doc)

    def test_fuzz_totality(self):
        rng = random.Random(99)
        fragments = [b"<", b">", b"osd:OSDSpec", b'"', b"&", b"\x00", b"\xff", b"name=", b"/", b"?xml"]
        for _ in range(2000):
            blob = b"".join(rng.choice(fragments) for _ in range(rng.randrange(0, 20)))
            blob += bytes(rng.randrange(256) for _ in range(rng.randrange(0, 16)))
            try:
                parse_osdspec(blob)
            except OsdSpecError:
                pass


class TestSerialize:
    def test_sample_round_trip(self, service_xml):
        spec = parse_osdspec(service_xml)
        assert parse_osdspec(serialize_osdspec(spec)) == spec

    def test_minimal_round_trip(self):
        spec = minimal_spec()
        assert parse_osdspec(serialize_osdspec(spec)) == spec

    def test_canonical_bytes(self, service_xml):
        spec = parse_osdspec(service_xml)
        again = parse_osdspec(serialize_osdspec(spec))
        assert serialize_osdspec(spec) == serialize_osdspec(again)

    def test_escaping_round_trip(self):
        spec = minimal_spec()
        spec.oamos[0].name = 'we & <them> "quoted"'
        spec.oamos[0].osmos[0].query_requests = ["SELECT ?s WHERE { ?s <urn:p> \"a<b\" . }"]
        spec.oamos[0].osmos[0].widgets = [Widget("urn:w:1", [("k", 'v"<>&')])]
        assert parse_osdspec(serialize_osdspec(spec)) == spec

    def test_invalid_spec_refuses_to_serialize(self):
        with pytest.raises(OsdSpecValidationError):
            serialize_osdspec(OsdSpec(oamos=[]))


class TestValidate:
    def test_valid_sample(self, service_xml):
        assert validate(parse_osdspec(service_xml)) == []

    def test_empty_queries_diagnostic(self):
        spec = minimal_spec()
        spec.oamos[0].osmos[0].query_requests = []
        diags = validate(spec)
        assert len(diags) == 1
        assert "OAMO[0].OSMO[0].query_requests" in diags[0]

    def test_empty_oamo_name_path(self):
        spec = minimal_spec()
        spec.oamos[0].name = ""
        assert any(d.startswith("OAMO[0].name") for d in validate(spec))

    def test_bad_widget_iri(self):
        spec = minimal_spec()
        spec.oamos[0].osmos[0].widgets = [Widget("noscheme", [])]
        assert any("widget_id" in d for d in validate(spec))
