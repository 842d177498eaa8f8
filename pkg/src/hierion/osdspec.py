"""Service-description documents: data model, XML parsing, canonical
serialization, and validation.

The document composes one or more OAMO containers, each holding OSMO service
units with query controls, presentation widgets, and embedded query text.
Widgets are parsed and stored, never rendered.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional
from xml.etree import ElementTree as ET
from xml.sax.saxutils import escape, quoteattr

NS_OSD = "http://www.openiot.eu/osdspec"
NS_ST = "http://www.w3.org/2007/SPARQL/protocol-types#"
NS_RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
NS_VBR = "http://www.w3.org/2007/SPARQL/results#"
NS_XSI = "http://www.w3.org/2001/XMLSchema-instance"

_KNOWN_NS = {NS_OSD, NS_ST, NS_RDF, NS_VBR, NS_XSI}


class OsdSpecError(Exception):
    pass


class OsdSpecParseError(OsdSpecError):
    """XML not well-formed, or not a spec document. Carries a location when
    the underlying XML parser provides one."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        if line is not None:
            message = f"{line}:{column}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class OsdSpecValidationError(OsdSpecError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass
class Widget:
    widget_id: str
    attributes: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class QueryControls:
    query_schedule: Optional[str] = None  # opaque; empty/None means "run continuously"
    report_if_empty: bool = False


@dataclass
class Osmo:
    name: str
    query_controls: QueryControls = field(default_factory=QueryControls)
    widgets: list[Widget] = field(default_factory=list)
    query_requests: list[str] = field(default_factory=list)


@dataclass
class Oamo:
    name: str
    osmos: list[Osmo] = field(default_factory=list)


@dataclass
class OsdSpec:
    oamos: list[Oamo] = field(default_factory=list)


def parse_osdspec(text: str | bytes) -> OsdSpec:
    """Parse an XML service description. Any input either yields a spec or a
    located OsdSpecParseError / OsdSpecValidationError; never crashes."""
    if isinstance(text, str):
        data = text.encode("utf-8", errors="surrogateescape")
    else:
        data = text
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, column = exc.position if exc.position else (None, None)
        raise OsdSpecParseError(str(exc), line, column) from exc
    except (ValueError, UnicodeError) as exc:
        raise OsdSpecParseError(str(exc)) from exc

    violations: list[str] = []
    if root.tag != f"{{{NS_OSD}}}OSDSpec":
        raise OsdSpecParseError(f"root element is {root.tag}, not OSDSpec")
    spec = OsdSpec()
    for i, oamo_el in enumerate(_children(root, violations, "OSDSpec")):
        if oamo_el.tag != f"{{{NS_OSD}}}OAMO":
            violations.append(f"OSDSpec: unexpected element {oamo_el.tag}")
            continue
        oamo = Oamo(name=oamo_el.get("name", ""))
        if not oamo.name:
            violations.append(f"OAMO[{i}].name: missing or empty")
        for j, osmo_el in enumerate(_children(oamo_el, violations, f"OAMO[{i}]")):
            if osmo_el.tag != f"{{{NS_OSD}}}OSMO":
                violations.append(f"OAMO[{i}]: unexpected element {osmo_el.tag}")
                continue
            oamo.osmos.append(_parse_osmo(osmo_el, f"OAMO[{i}].OSMO[{j}]", violations))
        spec.oamos.append(oamo)
    violations.extend(d for d in validate(spec) if d not in violations)
    if violations:
        raise OsdSpecValidationError(violations)
    return spec


def _children(el, violations, path):
    for child in el:
        ns = child.tag.split("}")[0].lstrip("{") if child.tag.startswith("{") else ""
        if ns and ns not in _KNOWN_NS:
            violations.append(f"{path}: unknown namespace {ns}")
            continue
        yield child
    return


def _parse_osmo(el, path: str, violations: list[str]) -> Osmo:
    osmo = Osmo(name=el.get("name", ""))
    if not osmo.name:
        violations.append(f"{path}.name: missing or empty")
    for child in el:
        tag = child.tag
        if tag == f"{{{NS_OSD}}}queryControls":
            osmo.query_controls = _parse_controls(child, path, violations)
        elif tag == f"{{{NS_OSD}}}requestPresentation":
            for w in child:
                if w.tag != f"{{{NS_OSD}}}widget":
                    violations.append(f"{path}.requestPresentation: unexpected {w.tag}")
                    continue
                widget = Widget(widget_id=w.get("widgetID", ""))
                if not widget.widget_id or ":" not in widget.widget_id:
                    violations.append(f"{path}.widget: widgetID is not an IRI: {widget.widget_id!r}")
                for attr in w:
                    if attr.tag == f"{{{NS_OSD}}}presentationAttr":
                        widget.attributes.append((attr.get("name", ""), attr.get("value", "")))
                osmo.widgets.append(widget)
        elif tag == f"{{{NS_ST}}}query-request":
            q = child.find("query")
            if q is None:
                violations.append(f"{path}.query-request: missing <query> element")
            else:
                osmo.query_requests.append(q.text or "")
        else:
            ns = tag.split("}")[0].lstrip("{") if tag.startswith("{") else ""
            if ns and ns not in _KNOWN_NS:
                violations.append(f"{path}: unknown namespace {ns}")
            else:
                violations.append(f"{path}: unexpected element {tag}")
    return osmo


def _parse_controls(el, path: str, violations: list[str]) -> QueryControls:
    controls = QueryControls()
    for child in el:
        if child.tag == f"{{{NS_OSD}}}QuerySchedule":
            controls.query_schedule = (child.text or "").strip() or None
        elif child.tag == f"{{{NS_OSD}}}reportIfEmpty":
            text = (child.text or "").strip()
            if text not in ("true", "false"):
                violations.append(f"{path}.queryControls.reportIfEmpty: not a boolean: {text!r}")
            else:
                controls.report_if_empty = text == "true"
        else:
            violations.append(f"{path}.queryControls: unexpected element {child.tag}")
    return controls


def validate(spec: OsdSpec) -> list[str]:
    """Structural diagnostics; empty list iff the spec satisfies all
    invariants. Paths name the offending field."""
    out = []
    if not spec.oamos:
        out.append("OSDSpec.oamos: at least one OAMO required")
    for i, oamo in enumerate(spec.oamos):
        if not oamo.name:
            out.append(f"OAMO[{i}].name: empty")
        if not oamo.osmos:
            out.append(f"OAMO[{i}].osmos: at least one OSMO required")
        for j, osmo in enumerate(oamo.osmos):
            path = f"OAMO[{i}].OSMO[{j}]"
            if not osmo.name:
                out.append(f"{path}.name: empty")
            if not osmo.query_requests:
                out.append(f"{path}.query_requests: at least one query required")
            for k, widget in enumerate(osmo.widgets):
                if not widget.widget_id or ":" not in widget.widget_id:
                    out.append(f"{path}.widgets[{k}].widget_id: not an IRI")
    return out


def serialize_osdspec(spec: OsdSpec) -> str:
    """Canonical serialization: fixed prefixes and element order, so two
    serializations of equal specs are byte-identical."""
    bad = validate(spec)
    if bad:
        raise OsdSpecValidationError(bad)
    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    out.append(
        "<osd:OSDSpec"
        f' xmlns:st="{NS_ST}"'
        f' xmlns:vbr="{NS_VBR}"'
        f' xmlns:rdf="{NS_RDF}"'
        f' xmlns:osd="{NS_OSD}"'
        f' xmlns:xsi="{NS_XSI}">'
    )
    for oamo in spec.oamos:
        out.append(f"  <osd:OAMO name={quoteattr(oamo.name)}>")
        for osmo in oamo.osmos:
            out.append(f"    <osd:OSMO name={quoteattr(osmo.name)}>")
            out.append("      <osd:queryControls>")
            sched = osmo.query_controls.query_schedule
            if sched:
                out.append(f"        <osd:QuerySchedule>{escape(sched)}</osd:QuerySchedule>")
            else:
                out.append("        <osd:QuerySchedule></osd:QuerySchedule>")
            flag = "true" if osmo.query_controls.report_if_empty else "false"
            out.append(f"        <osd:reportIfEmpty>{flag}</osd:reportIfEmpty>")
            out.append("      </osd:queryControls>")
            if osmo.widgets:
                out.append("      <osd:requestPresentation>")
                for w in osmo.widgets:
                    out.append(f"        <osd:widget widgetID={quoteattr(w.widget_id)}>")
                    for name, value in w.attributes:
                        out.append(
                            f"          <osd:presentationAttr name={quoteattr(name)}"
                            f" value={quoteattr(value)}/>"
                        )
                    out.append("        </osd:widget>")
                out.append("      </osd:requestPresentation>")
            for q in osmo.query_requests:
                out.append("      <st:query-request>")
                out.append(f"        <query>{escape(q)}</query>")
                out.append("      </st:query-request>")
            out.append("    </osd:OSMO>")
        out.append(f"  </osd:OAMO>")
    out.append("</osd:OSDSpec>")
    return "\n".join(out) + "\n"
