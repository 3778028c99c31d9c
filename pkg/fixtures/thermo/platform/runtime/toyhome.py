"""toyhome: a tiny hub runtime used to exercise integrations in a sandbox.

Integrations are folders with a manifest.json plus entity modules. Each
entity module defines setup(hub, config) and registers entity instances
that subclass the base classes below. Entities talk to their device over
a line-oriented JSON-over-TCP protocol via device_request().
"""

import json
import socket


class ToyHomeError(Exception):
    pass


SERVICES = {
    "sensor": ("read",),
    "switch": ("turn_on", "turn_off"),
    "command": ("trigger",),
    "number": ("set_value",),
    "select": ("select",),
    "stream": ("fetch_frame",),
}

DEFAULT_ARGS = {
    "set_value": {"value": 50.0},
    "select": {"option": "auto"},
}


def device_request(endpoint, function_id, arguments=None, timeout=5.0):
    host, port = endpoint.rsplit(":", 1)
    with socket.create_connection((host, int(port)), timeout=timeout) as sock:
        payload = {"function_id": function_id, "arguments": arguments or {}}
        sock.sendall((json.dumps(payload) + "\n").encode("utf-8"))
        line = sock.makefile("r", encoding="utf-8").readline()
    if not line:
        raise ToyHomeError("no response from device at %s" % endpoint)
    reply = json.loads(line)
    if not reply.get("ok"):
        raise ToyHomeError("device error: %s" % reply.get("error"))
    return reply


def device_call_log(endpoint):
    """The device-side call log, for asserting a service reached the device."""
    return device_request(endpoint, "__call_log__")["value"]


class Entity:
    kind = "entity"

    def __init__(self, entity_id, name):
        if not entity_id:
            raise ToyHomeError("entity_id required")
        self.entity_id = entity_id
        self.name = name


class SensorEntity(Entity):
    kind = "sensor"

    def read(self):
        raise NotImplementedError


class SwitchEntity(Entity):
    kind = "switch"

    def turn_on(self):
        raise NotImplementedError

    def turn_off(self):
        raise NotImplementedError


class CommandEntity(Entity):
    kind = "command"

    def trigger(self):
        raise NotImplementedError


class NumberEntity(Entity):
    kind = "number"

    def set_value(self, value):
        raise NotImplementedError


class SelectEntity(Entity):
    kind = "select"

    def select(self, option):
        raise NotImplementedError


class StreamEntity(Entity):
    kind = "stream"

    def fetch_frame(self):
        raise NotImplementedError


class Hub:
    def __init__(self, device_endpoint):
        self.device_endpoint = device_endpoint
        self.integration = None
        self.entities = {}

    def register_integration(self, manifest):
        for key in ("name", "domain", "entities"):
            if key not in manifest:
                raise ToyHomeError("manifest missing required key %r" % key)
        self.integration = manifest

    def add_entity(self, entity):
        if not isinstance(entity, Entity):
            raise ToyHomeError("entities must extend toyhome.Entity")
        self.entities[entity.entity_id] = entity

    def call_service(self, entity_id, service, **kwargs):
        entity = self.entities.get(entity_id)
        if entity is None:
            raise ToyHomeError("unknown entity %r" % entity_id)
        if service not in SERVICES.get(entity.kind, ()):
            raise ToyHomeError("service %r not valid for kind %r" % (service, entity.kind))
        return getattr(entity, service)(**kwargs)
