"""Sandbox entry point: load one integration into a fresh hub, run one test.

Usage: python run_test.py <artifact_dir> <test_file> <device_endpoint>
Exit code 0 means the test passed; anything else is a failure, with the
traceback on stderr.
"""

import importlib.util
import json
import sys
import traceback
from pathlib import Path

RUNTIME_DIR = Path(__file__).resolve().parent
if str(RUNTIME_DIR) not in sys.path:
    sys.path.insert(0, str(RUNTIME_DIR))

import toyhome

_load_counter = 0


def load_integration(hub, config, artifact_dir):
    global _load_counter
    _load_counter += 1
    manifest = json.loads((artifact_dir / "manifest.json").read_text(encoding="utf-8"))
    hub.register_integration(manifest)
    if str(artifact_dir) not in sys.path:
        sys.path.insert(0, str(artifact_dir))
    entities = []
    for spec in manifest["entities"]:
        module_path = artifact_dir / spec["file"]
        module_name = "integration_%d_%s" % (_load_counter, module_path.stem)
        module_spec = importlib.util.spec_from_file_location(module_name, module_path)
        module = importlib.util.module_from_spec(module_spec)
        sys.modules[module_name] = module
        module_spec.loader.exec_module(module)
        registered = module.setup(hub, config)
        entities.extend(registered or [])
    return manifest, entities


def main():
    artifact_dir = Path(sys.argv[1]).resolve()
    test_file = Path(sys.argv[2]).resolve()
    device_endpoint = sys.argv[3]

    hub = toyhome.Hub(device_endpoint)
    config = {"device_endpoint": device_endpoint}
    manifest, entities = load_integration(hub, config, artifact_dir)

    scope = {
        "hub": hub,
        "toyhome": toyhome,
        "manifest": manifest,
        "entities": entities,
        "config": config,
        "device_endpoint": device_endpoint,
        "artifact_dir": artifact_dir,
        "load_integration": lambda hub=hub, config=config: load_integration(hub, config, artifact_dir),
    }
    body = test_file.read_text(encoding="utf-8")
    exec(compile(body, str(test_file), "exec"), scope)
    print("TEST OK")


if __name__ == "__main__":
    try:
        main()
    except Exception:
        traceback.print_exc()
        sys.exit(1)
