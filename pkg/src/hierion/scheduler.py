"""Global scheduler: accepts service-description requests, resolves
contributing streams through discovery, and reserves them.

A failed submit is atomic: no reservation survives and nothing is registered.
Stream capacity defaults to unbounded; explicit limits exist so reservation
semantics are testable.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

from . import sparql
from .osdspec import OsdSpec
from .registry import Registry

UNBOUNDED = -1


class SchedulerError(Exception):
    pass


class AuthError(SchedulerError):
    pass


class ReservationError(SchedulerError):
    def __init__(self, message: str, contended: list[str]):
        super().__init__(message)
        self.contended = contended


@dataclass
class Reservation:
    id: str
    stream_ids: list[str]
    holder: str
    capacity_units: int = 1


@dataclass
class ServiceInstance:
    service_id: str
    spec: OsdSpec
    resolved_streams: list[str] = field(default_factory=list)
    reservation_id: Optional[str] = None
    state: str = "pending"  # pending | reserved | active | stopped | failed
    failure_reason: Optional[str] = None


class ReservationTable:
    """All-or-nothing reservations against per-stream capacities."""

    def __init__(self):
        self._lock = threading.Lock()
        self._capacity: dict[str, int] = {}
        self._used: dict[str, int] = {}
        self._reservations: dict[str, Reservation] = {}
        self._next = 0

    def set_capacity(self, stream_id: str, units: int) -> None:
        with self._lock:
            self._capacity[stream_id] = units

    def reserve(self, stream_ids: list[str], holder: str, units: int = 1) -> Reservation:
        with self._lock:
            contended = []
            for sid in stream_ids:
                cap = self._capacity.get(sid, UNBOUNDED)
                if cap != UNBOUNDED and self._used.get(sid, 0) + units > cap:
                    contended.append(sid)
            if contended:
                raise ReservationError(
                    f"capacity exceeded on {len(contended)} stream(s)", contended
                )
            self._next += 1
            res = Reservation(f"rsv-{self._next}", list(stream_ids), holder, units)
            for sid in stream_ids:
                self._used[sid] = self._used.get(sid, 0) + units
            self._reservations[res.id] = res
            return res

    def release(self, reservation_id: str) -> None:
        with self._lock:
            res = self._reservations.pop(reservation_id, None)
            if res is None:
                return  # idempotent
            for sid in res.stream_ids:
                self._used[sid] -= res.capacity_units

    def used(self, stream_id: str) -> int:
        with self._lock:
            return self._used.get(stream_id, 0)

    def active(self) -> list[Reservation]:
        with self._lock:
            return list(self._reservations.values())


class Scheduler:
    def __init__(self, registry: Registry):
        self.registry = registry
        self.reservations = ReservationTable()
        self._instances: dict[str, ServiceInstance] = {}
        self._lock = threading.Lock()

    def submit_request(self, spec: OsdSpec, token_role: Optional[str]) -> ServiceInstance:
        """Parse every embedded query, resolve streams by evaluating them
        against the registry, reserve, and register. token_role is the role
        already verified by the caller's auth layer."""
        if token_role not in ("admin",):
            raise AuthError(f"role {token_role!r} may not create services")

        asts = []
        for i, oamo in enumerate(spec.oamos):
            for j, osmo in enumerate(oamo.osmos):
                sched = osmo.query_controls.query_schedule
                if sched:
                    return self._failed(spec, f"OAMO[{i}].OSMO[{j}]: unsupported schedule {sched!r}")
                for k, query in enumerate(osmo.query_requests):
                    try:
                        asts.append((osmo, sparql.parse(query)))
                    except sparql.SparqlError as exc:
                        raise SchedulerError(
                            f"OAMO[{i}].OSMO[{j}].query[{k}]: {exc}"
                        ) from exc

        streams: set[str] = set()
        report_if_empty = False
        for osmo, ast in asts:
            report_if_empty = report_if_empty or osmo.query_controls.report_if_empty
            result = sparql.evaluate(ast, self.registry.store)
            for var in ast.select_vars:
                streams.update(term.value for term in result.column(var) if hasattr(term, "value"))

        if not streams and not report_if_empty:
            return self._failed(spec, "no contributing sensors")

        with self._lock:
            # reserve before registering so a capacity failure leaves no
            # registry record behind
            res = self.reservations.reserve(sorted(streams), holder="pending")
            try:
                service_id = self.registry.register_service(spec, capabilities=[])
            except Exception:
                self.reservations.release(res.id)
                raise
            res.holder = service_id
            instance = ServiceInstance(
                service_id=service_id,
                spec=spec,
                resolved_streams=sorted(streams),
                reservation_id=res.id,
                state="reserved",
            )
            self.registry.set_service_status(service_id, "scheduled")
            self._instances[service_id] = instance
            return instance

    def _failed(self, spec: OsdSpec, reason: str) -> ServiceInstance:
        return ServiceInstance(service_id="", spec=spec, state="failed", failure_reason=reason)

    def activate(self, service_id: str) -> ServiceInstance:
        with self._lock:
            instance = self._instances.get(service_id)
            if instance is None:
                raise SchedulerError(f"unknown service: {service_id}")
            if instance.state != "reserved":
                raise SchedulerError(
                    f"cannot activate service in state {instance.state!r}"
                )
            instance.state = "active"
            self.registry.set_service_status(service_id, "delivering")
            return instance

    def stop(self, service_id: str) -> ServiceInstance:
        with self._lock:
            instance = self._instances.get(service_id)
            if instance is None:
                raise SchedulerError(f"unknown service: {service_id}")
            if instance.state not in ("reserved", "active"):
                raise SchedulerError(f"cannot stop service in state {instance.state!r}")
            if instance.reservation_id is not None:
                self.reservations.release(instance.reservation_id)
            if instance.state == "reserved":
                self.registry.set_service_status(service_id, "delivering")
            instance.state = "stopped"
            self.registry.set_service_status(service_id, "stopped")
            return instance

    def instance(self, service_id: str) -> ServiceInstance:
        with self._lock:
            try:
                return self._instances[service_id]
            except KeyError:
                raise SchedulerError(f"unknown service: {service_id}") from None
