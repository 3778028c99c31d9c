"""Mock device that implements a full function set and never fails.

Every declared function answers with a success signal or a valid dummy
value; the only error the device ever produces is "unknown function",
which by construction points at a bug in the integration under test.
The device is served over a line-oriented JSON-over-TCP protocol:

    request   {"function_id": "...", "arguments": {...}}\n
    response  {"ok": true, "value": ...}\n  or  {"ok": false, "error": "..."}\n

The reserved id "__call_log__" returns the accumulated call log so
sandbox tests can assert that a platform service actually reached the
device.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import InvalidInputError
from .model import FunctionDescriptor, FunctionKind

logger = logging.getLogger(__name__)

CALL_LOG_FUNCTION = "__call_log__"
FUNCTIONS_FUNCTION = "__functions__"


@dataclass(frozen=True)
class DummyValuePolicy:
    """Deterministic per-kind dummy values; no physical meaning claimed."""

    toggle_value: bool = True
    range_low: float = 0.0
    range_high: float = 100.0
    enum_values: tuple[str, ...] = ("auto", "low", "high")
    sensor_value: float = 21.5
    sensor_unit: str = "celsius"
    ack_token: str = "ack"
    empty_frame_marker: str = "EMPTY_FRAME"

    def value_for(self, descriptor: FunctionDescriptor) -> Any:
        kind = descriptor.kind
        if kind is FunctionKind.BINARY_TOGGLE:
            return self.toggle_value
        if kind is FunctionKind.RANGED_SETTING:
            return (self.range_low + self.range_high) / 2.0
        if kind is FunctionKind.ENUMERATED_MODE:
            return self.enum_values[0]
        if kind is FunctionKind.SENSOR_READOUT:
            return self.sensor_value
        if kind is FunctionKind.CONTINUOUS_STREAM:
            return self.empty_frame_marker
        return self.ack_token


@dataclass(frozen=True)
class CallRecord:
    function_id: str
    arguments: dict[str, Any]
    timestamp: float

    def to_dict(self) -> dict[str, Any]:
        return {"function_id": self.function_id, "arguments": self.arguments, "ts": self.timestamp}


class VirtualDevice:
    """In-memory device: state per function plus an append-only call log."""

    def __init__(self, functions: list[FunctionDescriptor], policy: DummyValuePolicy,
                 clock: Callable[[], float] | None = None):
        if not functions:
            raise InvalidInputError("a device needs at least one function")
        seen: set[str] = set()
        for descriptor in functions:
            if descriptor.function_id in seen:
                raise InvalidInputError(f"duplicate function_id {descriptor.function_id!r}")
            seen.add(descriptor.function_id)
        self.functions = {descriptor.function_id: descriptor for descriptor in functions}
        self.policy = policy
        self.state: dict[str, Any] = {
            fid: policy.value_for(descriptor) for fid, descriptor in self.functions.items()
        }
        self.call_log: list[CallRecord] = []
        self._clock = clock or (lambda: 0.0)
        self._lock = threading.Lock()

    def invoke(self, function_id: str, arguments: dict[str, Any] | None = None) -> dict[str, Any]:
        """Handle one request; declared functions always succeed."""
        arguments = arguments or {}
        if function_id == CALL_LOG_FUNCTION:
            with self._lock:
                return {"ok": True, "value": [record.to_dict() for record in self.call_log]}
        if function_id == FUNCTIONS_FUNCTION:
            return {"ok": True, "value": sorted(self.functions)}
        descriptor = self.functions.get(function_id)
        if descriptor is None:
            return {"ok": False, "error": "not_found", "function_id": function_id}
        with self._lock:
            self.call_log.append(CallRecord(function_id, dict(arguments), self._clock()))
            if descriptor.kind is FunctionKind.BINARY_TOGGLE and "on" in arguments:
                self.state[function_id] = bool(arguments["on"])
            elif descriptor.kind is FunctionKind.RANGED_SETTING and "value" in arguments:
                self.state[function_id] = float(arguments["value"])
            elif descriptor.kind is FunctionKind.ENUMERATED_MODE and "option" in arguments:
                self.state[function_id] = str(arguments["option"])
            value = self.state[function_id]
        response: dict[str, Any] = {"ok": True, "value": value}
        if descriptor.kind is FunctionKind.SENSOR_READOUT:
            response["unit"] = self.policy.sensor_unit
        return response

    def export_call_log(self) -> list[dict[str, Any]]:
        with self._lock:
            return [record.to_dict() for record in self.call_log]


def build_virtual_device(functions: list[FunctionDescriptor],
                         policy: DummyValuePolicy | None = None,
                         clock: Callable[[], float] | None = None) -> VirtualDevice:
    return VirtualDevice(functions, policy or DummyValuePolicy(), clock=clock)


@dataclass
class ServerHandle:
    host: str
    port: int
    device: VirtualDevice
    _server: "DeviceServer" = field(repr=False, default=None)  # type: ignore[assignment]

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    def close(self) -> None:
        self._server.stop()

    def __enter__(self) -> "ServerHandle":
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.close()


class DeviceServer:
    """Single-threaded accept loop; requests are handled strictly in order."""

    def __init__(self, device: VirtualDevice, host: str, port: int):
        self.device = device
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._listener.bind((host, port))
        except OSError as exc:
            self._listener.close()
            raise InvalidInputError(f"cannot bind {host}:{port}: {exc}") from exc
        self._listener.listen(8)
        self.host, self.port = self._listener.getsockname()[:2]
        self._stopping = threading.Event()
        self._thread = threading.Thread(target=self._serve_loop, name="virtual-device", daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        """Graceful shutdown: stop accepting, let the in-flight request drain."""
        self._stopping.set()
        try:
            # Unblock accept() with a throwaway connection.
            with socket.create_connection((self.host, self.port), timeout=1.0):
                pass
        except OSError:
            pass
        self._thread.join(timeout=5.0)
        self._listener.close()

    def _serve_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                connection, _ = self._listener.accept()
            except OSError:
                break
            if self._stopping.is_set():
                connection.close()
                break
            try:
                self._handle_connection(connection)
            except Exception:  # noqa: BLE001 - a bad client must not kill the loop
                logger.exception("virtual device connection failed")

    def _handle_connection(self, connection: socket.socket) -> None:
        with connection:
            reader = connection.makefile("r", encoding="utf-8", newline="\n")
            for line in reader:
                line = line.strip()
                if not line:
                    continue
                try:
                    request = json.loads(line)
                    response = self.device.invoke(
                        request.get("function_id", ""), request.get("arguments") or {}
                    )
                except json.JSONDecodeError:
                    response = {"ok": False, "error": "bad_request"}
                payload = (json.dumps(response) + "\n").encode("utf-8")
                try:
                    connection.sendall(payload)
                except OSError:
                    return


def serve(device: VirtualDevice, host: str = "127.0.0.1", port: int = 0) -> ServerHandle:
    """Serve the device over TCP; port 0 picks a free local port."""
    server = DeviceServer(device, host, port)
    server.start()
    return ServerHandle(host=server.host, port=server.port, device=device, _server=server)


def device_request(endpoint: str, function_id: str,
                   arguments: dict[str, Any] | None = None, timeout: float = 5.0) -> dict[str, Any]:
    """One-shot client helper used by adapters and tests."""
    host, port_text = endpoint.rsplit(":", 1)
    with socket.create_connection((host, int(port_text)), timeout=timeout) as connection:
        payload = {"function_id": function_id, "arguments": arguments or {}}
        connection.sendall((json.dumps(payload) + "\n").encode("utf-8"))
        reader = connection.makefile("r", encoding="utf-8", newline="\n")
        line = reader.readline()
    if not line:
        raise ConnectionError(f"no response from device at {endpoint}")
    return json.loads(line)
