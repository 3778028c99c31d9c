import json
import socket

import pytest

from iotforge.errors import InvalidInputError
from iotforge.model import FunctionDescriptor, FunctionKind
from iotforge.virtualdevice import (
    DummyValuePolicy,
    build_virtual_device,
    device_request,
    serve,
)


def _functions(*specs):
    return [FunctionDescriptor(fid, fid, kind) for fid, kind in specs]


THERMO = _functions(("update", FunctionKind.SENSOR_READOUT),
                    ("transmit", FunctionKind.UNARY_COMMAND))


class TestBuild:
    def test_two_functions_two_endpoints(self):
        device = build_virtual_device(THERMO)
        assert device.invoke("update")["ok"]
        assert device.invoke("transmit")["ok"]

    def test_duplicate_id_rejected(self):
        with pytest.raises(InvalidInputError):
            build_virtual_device(_functions(("a", FunctionKind.UNARY_COMMAND),
                                            ("a", FunctionKind.BINARY_TOGGLE)))

    def test_empty_functions_rejected(self):
        with pytest.raises(InvalidInputError):
            build_virtual_device([])

    def test_tier3_eleven_functions_all_callable_log_empty(self):
        functions = _functions(*[(f"f{i}", FunctionKind.UNARY_COMMAND) for i in range(11)])
        device = build_virtual_device(functions)
        assert len(device.functions) == 11
        assert device.call_log == []
        for descriptor in functions:
            assert device.invoke(descriptor.function_id)["ok"]


class TestInvoke:
    def test_toggle_returns_true_and_logs(self):
        device = build_virtual_device(_functions(("night_mode", FunctionKind.BINARY_TOGGLE)))
        response = device.invoke("night_mode", {"on": True})
        assert response == {"ok": True, "value": True}
        assert len(device.call_log) == 1
        assert device.call_log[0].function_id == "night_mode"

    def test_unknown_function_not_found(self):
        device = build_virtual_device(THERMO)
        response = device.invoke("warp_drive")
        assert response["ok"] is False
        assert response["error"] == "not_found"
        assert device.call_log == []  # unknown calls are not logged

    def test_sensor_constant(self):
        device = build_virtual_device(THERMO)
        response = device.invoke("update")
        assert response["value"] == 21.5
        assert response["unit"] == "celsius"

    def test_dummy_values_are_type_valid_per_kind(self):
        policy = DummyValuePolicy()
        kinds = {
            FunctionKind.BINARY_TOGGLE: lambda v: isinstance(v, bool),
            FunctionKind.RANGED_SETTING: lambda v: policy.range_low <= v <= policy.range_high,
            FunctionKind.ENUMERATED_MODE: lambda v: v in policy.enum_values,
            FunctionKind.SENSOR_READOUT: lambda v: isinstance(v, float),
            FunctionKind.UNARY_COMMAND: lambda v: v == policy.ack_token,
            FunctionKind.CONTINUOUS_STREAM: lambda v: v == policy.empty_frame_marker,
        }
        functions = _functions(*[(kind.value, kind) for kind in kinds])
        device = build_virtual_device(functions, policy)
        for kind, check in kinds.items():
            assert check(device.invoke(kind.value)["value"]), kind

    def test_ranged_midpoint(self):
        device = build_virtual_device(_functions(("speed", FunctionKind.RANGED_SETTING)))
        assert device.invoke("speed")["value"] == 50.0

    def test_totality_any_declared_function_succeeds(self):
        functions = _functions(*[(k.value, k) for k in FunctionKind])
        device = build_virtual_device(functions)
        for descriptor in functions:
            for args in ({}, {"on": False}, {"value": 3}, {"option": "auto"}, {"junk": 1}):
                assert device.invoke(descriptor.function_id, args)["ok"], (descriptor, args)

    def test_call_log_reserved_introspection(self):
        device = build_virtual_device(THERMO)
        device.invoke("update")
        log = device.invoke("__call_log__")["value"]
        assert [entry["function_id"] for entry in log] == ["update"]


class TestServer:
    def test_round_trip_declared_function(self):
        device = build_virtual_device(THERMO)
        with serve(device) as handle:
            reply = device_request(handle.endpoint, "update")
        assert reply == {"ok": True, "value": 21.5, "unit": "celsius"}

    def test_undeclared_function_not_found_response(self):
        device = build_virtual_device(THERMO)
        with serve(device) as handle:
            reply = device_request(handle.endpoint, "nope")
        assert reply["ok"] is False and reply["error"] == "not_found"

    def test_malformed_request_bad_request(self):
        device = build_virtual_device(THERMO)
        with serve(device) as handle:
            host, port = handle.endpoint.rsplit(":", 1)
            with socket.create_connection((host, int(port)), timeout=5) as conn:
                conn.sendall(b"this is not json\n")
                line = conn.makefile("r").readline()
        assert json.loads(line)["error"] == "bad_request"

    def test_hundred_sequential_requests_preserve_order(self):
        # DERIVED oracle: the replay script itself counts what it sent.
        device = build_virtual_device(THERMO)
        sent = []
        with serve(device) as handle:
            host, port = handle.endpoint.rsplit(":", 1)
            with socket.create_connection((host, int(port)), timeout=5) as conn:
                reader = conn.makefile("r")
                for i in range(100):
                    fid = "update" if i % 2 == 0 else "transmit"
                    sent.append(fid)
                    conn.sendall((json.dumps({"function_id": fid, "arguments": {}}) + "\n").encode())
                    assert json.loads(reader.readline())["ok"]
        log = device.export_call_log()
        assert len(log) == 100
        assert [entry["function_id"] for entry in log] == sent

    def test_replay_reproduces_identical_log_minus_timestamps(self):
        logs = []
        for _ in range(2):
            device = build_virtual_device(THERMO)
            with serve(device) as handle:
                for fid in ("update", "transmit", "update"):
                    device_request(handle.endpoint, fid)
            logs.append([(e["function_id"], json.dumps(e["arguments"]))
                         for e in device.export_call_log()])
        assert logs[0] == logs[1]

    def test_port_busy_errors(self):
        device = build_virtual_device(THERMO)
        with serve(device) as handle:
            with pytest.raises(InvalidInputError):
                serve(device, port=handle.port)
