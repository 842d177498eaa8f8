"""Directory service: sensors and services registered as triples, discovered
through the query engine.

The vocabulary is pinned to the IRIs the discovery query uses (SSN sensor
class, DUL hasLocation, W3C geo lat/long), so the sample query runs verbatim
against a registry populated here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import sparql
from .geo import GeoPoint
from .sparql import GEO_NS
from .store import GraphId, Iri, Literal, Term, Triple, TripleStore

RDF_TYPE = Iri("http://www.w3.org/1999/02/22-rdf-syntax-ns#type")
RDFS_SUBCLASSOF = Iri("http://www.w3.org/2000/01/rdf-schema#subClassOf")
RDFS_LABEL = Iri("http://www.w3.org/2000/01/rdf-schema#label")
SSN_SENSOR = Iri("http://purl.oclc.org/NET/ssnx/ssn#Sensor")
SSN_OBSERVES = Iri("http://purl.oclc.org/NET/ssnx/ssn#observes")
DUL_HAS_LOCATION = Iri("http://www.loa-cnr.it/ontologies/DUL.owl#hasLocation")
GEO_GEOMETRY = Iri(GEO_NS + "geometry")
GEO_LAT = Iri(GEO_NS + "lat")
GEO_LONG = Iri(GEO_NS + "long")

OWNER_NODE = Iri("urn:hierion:ownerNode")
SERVICE_CLASS = Iri("urn:hierion:Service")
HAS_CAPABILITY = Iri("urn:hierion:capability")
HAS_STATUS = Iri("urn:hierion:status")

SENSORMETA_GRAPH = GraphId("http://openiot.eu/OpenIoT/sensormeta#")

SERVICE_STATUSES = ("registered", "scheduled", "delivering", "stopped")


class RegistryError(Exception):
    pass


class DuplicateIdError(RegistryError):
    pass


@dataclass
class SensorDescription:
    id: str
    label: str
    sensor_type: str
    type_parents: list[str]  # subClassOf chain, ending at the SSN Sensor class
    observed_properties: list[str]
    location: GeoPoint
    owner_node: str

    def validate(self) -> None:
        if not self.observed_properties:
            raise RegistryError(f"{self.id}: at least one observed property required")
        if not self.type_parents or self.type_parents[-1] != SSN_SENSOR.value:
            raise RegistryError(f"{self.id}: type_parents must terminate at {SSN_SENSOR.value}")
        if self.location is None:
            raise RegistryError(f"{self.id}: missing location")


@dataclass
class ServiceRecord:
    id: str
    spec: object  # OsdSpec
    capabilities: list[str]
    node_id: str
    status: str = "registered"

    def transition(self, new_status: str) -> None:
        order = SERVICE_STATUSES
        if new_status not in order or order.index(new_status) != order.index(self.status) + 1:
            raise RegistryError(f"illegal status transition {self.status} -> {new_status}")
        self.status = new_status


class Registry:
    """Thin semantic layer over the triple store; inherits its concurrent
    readers / single writer contract."""

    def __init__(self, store: Optional[TripleStore] = None, node_id: str = "local"):
        self.store = store if store is not None else TripleStore()
        self.node_id = node_id
        self._services: dict[str, ServiceRecord] = {}

    # -- sensors ----------------------------------------------------------

    def register_sensor(self, desc: SensorDescription) -> str:
        desc.validate()
        sensor = Iri(desc.id)
        if self.store.match(SENSORMETA_GRAPH, sensor, RDF_TYPE):
            raise DuplicateIdError(f"sensor already registered: {desc.id}")
        loc = Iri(desc.id + "#location")
        triples = [
            Triple(sensor, RDF_TYPE, Iri(desc.sensor_type)),
            Triple(sensor, RDFS_LABEL, Literal(desc.label)),
            Triple(sensor, OWNER_NODE, Literal(desc.owner_node)),
            Triple(sensor, DUL_HAS_LOCATION, loc),
            Triple(loc, GEO_GEOMETRY, Literal(desc.location.wkt())),
            Triple(loc, GEO_LAT, Literal(repr(desc.location.lat))),
            Triple(loc, GEO_LONG, Literal(repr(desc.location.lon))),
        ]
        chain = [desc.sensor_type] + list(desc.type_parents)
        for child, parent in zip(chain, chain[1:]):
            triples.append(Triple(Iri(child), RDFS_SUBCLASSOF, Iri(parent)))
        for prop in desc.observed_properties:
            triples.append(Triple(sensor, SSN_OBSERVES, Iri(prop)))
        self.store.insert(SENSORMETA_GRAPH, triples)
        return desc.id

    def sensor_description(self, sensor_id: str) -> SensorDescription:
        """Rebuild the description from its triples."""
        sensor = Iri(sensor_id)
        g = SENSORMETA_GRAPH
        types = self.store.match(g, sensor, RDF_TYPE)
        if not types:
            raise RegistryError(f"unknown sensor: {sensor_id}")
        sensor_type = types[0].o.value
        parents = []
        cur = sensor_type
        while cur != SSN_SENSOR.value:
            edges = self.store.match(g, Iri(cur), RDFS_SUBCLASSOF)
            if not edges:
                raise RegistryError(f"{sensor_id}: subClassOf chain broken at {cur}")
            cur = edges[0].o.value
            parents.append(cur)
        label = _one_literal(self.store, g, sensor, RDFS_LABEL)
        owner = _one_literal(self.store, g, sensor, OWNER_NODE)
        loc_nodes = self.store.match(g, sensor, DUL_HAS_LOCATION)
        if not loc_nodes:
            raise RegistryError(f"{sensor_id}: no location")
        loc = loc_nodes[0].o
        lat = float(_one_literal(self.store, g, loc, GEO_LAT))
        lon = float(_one_literal(self.store, g, loc, GEO_LONG))
        props = sorted(t.o.value for t in self.store.match(g, sensor, SSN_OBSERVES))
        return SensorDescription(
            id=sensor_id,
            label=label,
            sensor_type=sensor_type,
            type_parents=parents,
            observed_properties=props,
            location=GeoPoint(lon, lat),
            owner_node=owner,
        )

    def sensor_ids(self) -> list[str]:
        return sorted(t.s.value for t in self.store.match(SENSORMETA_GRAPH, None, DUL_HAS_LOCATION))

    def discovery_query(
        self, type_filter: Optional[str], center: GeoPoint, radius_km: float
    ) -> str:
        """The discovery query text, shaped like the sample device-discovery
        query: type/subclass anchors, location patterns, geo filter."""
        lines = ["SELECT ?sensorId", f"FROM <{SENSORMETA_GRAPH.iri.value}>", "WHERE", "{"]
        if type_filter is not None:
            lines.append(f"?sensorId <{RDF_TYPE.value}> <{type_filter}> .")
        lines += [
            f"?sensorId <{DUL_HAS_LOCATION.value}> ?loc .",
            "?loc geo:geometry ?geo .",
            "?loc geo:lat ?lat .",
            "?loc geo:long ?lon .",
            "FILTER (<bif:st_intersects>(?geo, <bif:st_point>"
            f"({center.lon!r}, {center.lat!r}), {radius_km!r})) .",
            "}",
        ]
        return "\n".join(lines)

    def discover_sensors(
        self, type_filter: Optional[str], center: GeoPoint, radius_km: float
    ) -> list[str]:
        if radius_km < 0:
            raise RegistryError(f"negative radius: {radius_km}")
        ast = sparql.parse(self.discovery_query(type_filter, center, radius_km))
        result = sparql.evaluate(ast, self.store)
        return sorted({term.value for term in result.column("sensorId")})

    # -- services ---------------------------------------------------------

    def register_service(self, spec, capabilities: list[str], node_id: Optional[str] = None) -> str:
        from . import osdspec as osd

        if spec is not None:
            bad = osd.validate(spec)
            if bad:
                raise RegistryError("invalid service spec: " + "; ".join(bad))
        node = node_id if node_id is not None else self.node_id
        service_id = f"urn:hierion:service:{node}:{len(self._services)}"
        record = ServiceRecord(service_id, spec, list(capabilities), node)
        svc = Iri(service_id)
        triples = [
            Triple(svc, RDF_TYPE, SERVICE_CLASS),
            Triple(svc, OWNER_NODE, Literal(node)),
            Triple(svc, HAS_STATUS, Literal(record.status)),
        ]
        triples += [Triple(svc, HAS_CAPABILITY, Literal(c)) for c in capabilities]
        self.store.insert(SENSORMETA_GRAPH, triples)
        self._services[service_id] = record
        return service_id

    def discover_services(
        self, capability: str, node_id: Optional[str] = None
    ) -> list[ServiceRecord]:
        hits = self.store.match(SENSORMETA_GRAPH, None, HAS_CAPABILITY, Literal(capability))
        out = []
        for t in hits:
            record = self._services.get(t.s.value)
            if record is None:
                continue
            if node_id is not None and record.node_id != node_id:
                continue
            out.append(record)
        return sorted(out, key=lambda r: r.id)

    def service(self, service_id: str) -> ServiceRecord:
        try:
            return self._services[service_id]
        except KeyError:
            raise RegistryError(f"unknown service: {service_id}") from None

    def set_service_status(self, service_id: str, status: str) -> None:
        self.service(service_id).transition(status)


def _one_literal(store: TripleStore, graph: GraphId, s: Term, p: Iri) -> str:
    hits = store.match(graph, s, p)
    if not hits:
        raise RegistryError(f"missing {p.value} for {s!r}")
    return hits[0].o.lexical
