"""Climate sensor entity for the OpenSensor TH-02."""

import toyhome

import device_control


class ClimateSensor(toyhome.SensorEntity):
    def __init__(self, endpoint):
        super().__init__(entity_id="opensensor_th02.climate", name="TH-02 Climate")
        self._endpoint = endpoint

    def read(self):
        reply = device_control.read_climate(self._endpoint)
        return reply["value"]


def setup(hub, config):
    sensor = ClimateSensor(config["device_endpoint"])
    hub.add_entity(sensor)
    return [sensor]
