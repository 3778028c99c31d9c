"""Control client for the OpenSensor TH-02 thermo-hygrometer."""

import json
import socket


def _request(endpoint, function_id, arguments=None):
    host, port = endpoint.rsplit(":", 1)
    with socket.create_connection((host, int(port)), timeout=5) as sock:
        payload = {"function_id": function_id, "arguments": arguments or {}}
        sock.sendall((json.dumps(payload) + "\n").encode("utf-8"))
        line = sock.makefile("r", encoding="utf-8").readline()
    reply = json.loads(line)
    if not reply.get("ok"):
        raise RuntimeError("device error: %s" % reply.get("error"))
    return reply


def read_climate(endpoint):
    """Poll the device and return the current reading reply."""
    return _request(endpoint, "update")


def transmit_readings(endpoint):
    """Ask the device to push its readings to the paired receiver."""
    return _request(endpoint, "transmit")
