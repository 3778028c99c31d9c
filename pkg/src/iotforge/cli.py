"""Operator CLI: a thin layer over the pipeline and the service.

Subcommands mirror the pipeline stages (ingest, generate, autodebug,
hil, bench) plus `serve` for the HTTP/SSE session service. Offline runs
(scripted provider + fixture embedder) make no network calls beyond the
loopback virtual device.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

from .autodebug import AutoDebugConfig, auto_debug
from .clocks import FixedStepClock
from .config import RunConfig, load_config
from .errors import IotForgeError
from .fixtures import FixtureSet, ScriptedFeedback
from .harness import SandboxRunner, TestCase, TestCategory, TestOrigin
from .hil import HilConfig, HilSession, HilStatus, LoopbackAdapter, run_session, start_session
from .knowledge import KnowledgeToolbox, ToolContext, ingest_device_sources, ingest_platform_docs
from .llm import Gateway, ProviderBudget, TokenLedger
from .metrics import aggregate, write_records, write_report
from .pipeline import Pipeline, load_artifact_dir, load_functions, write_outputs
from .prompts import TemplateSet
from .virtualdevice import DummyValuePolicy, build_virtual_device, serve as serve_device


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML run configuration file")
    parser.add_argument("--fixtures", help="fixture directory for offline mode")
    parser.add_argument("--seed", type=int, help="determinism seed for the task")
    parser.add_argument("--out", help="output directory", default=None)


def _build_config(args: argparse.Namespace, **extra: Any) -> RunConfig:
    overrides: dict[str, Any] = {}
    if args.fixtures:
        overrides["fixtures_dir"] = args.fixtures
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["out_dir"] = args.out
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return load_config(args.config, overrides)


def _fail(message: str, stage: str = "") -> int:
    print(json.dumps({"error": message, "stage": stage}), file=sys.stderr)
    return 2


def _print_event(event: str, data: dict[str, Any]) -> None:
    if event == "stage":
        print(f"[stage] {data['stage']}")
    elif event == "test_result":
        print(f"[test] {data['test_id']}: {data['verdict']}")
    elif event.startswith("hil_probe"):
        print(f"[probe] {data.get('function_id')}: {data.get('question')}")


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _build_config(args)
    if not config.fixtures_dir:
        return _fail("ingest requires --fixtures", "ingesting")
    fixtures = FixtureSet(config.fixtures_dir)
    pipeline = Pipeline(config)
    task = pipeline.build_task()
    denylist = fixtures.denylist()
    device_store = ingest_device_sources(task, fixtures.fetcher(), denylist)
    platform_store = ingest_platform_docs(fixtures.profile(), fixtures.toc(), denylist)
    out = Path(config.out_dir) / "knowledge"
    device_store.save(out / "device")
    platform_store.save(out / "platform")
    print(f"device store: {device_store.chunk_count()} chunks "
          f"({len(device_store.exclusions)} screened out)")
    print(f"platform store: {platform_store.chunk_count()} chunks")
    print(f"snapshots written to {out}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    config = _build_config(args, retrieval_mode=args.retrieval_mode,
                           provider_fixture=args.provider_fixture)
    pipeline = Pipeline(config, on_event=_print_event)
    result = pipeline.run()
    out = write_outputs(result, config.out_dir)
    print(f"outputs written to {out}")
    if not result.usable:
        return _fail(result.failure_reason or "pipeline failed", result.stage.value)
    print(f"artifact revision {result.artifact.revision}; "
          f"{len(result.functions)} functions; suite green")
    return 0


def cmd_autodebug(args: argparse.Namespace) -> int:
    config = _build_config(args, provider_fixture=args.provider_fixture)
    if not config.fixtures_dir:
        return _fail("autodebug requires --fixtures", "auto_debugging")
    in_dir = Path(args.input or config.out_dir)
    fixtures = FixtureSet(config.fixtures_dir)
    profile = fixtures.profile()
    artifact = load_artifact_dir(in_dir / "artifact", profile.layout.manifest_path)
    functions = load_functions(in_dir / "functions.json")
    tests = _load_tests(in_dir / "tests.json")

    pipeline = Pipeline(config)
    task = pipeline.build_task()
    denylist = fixtures.denylist()
    ledger = TokenLedger()
    toolbox = KnowledgeToolbox(
        ToolContext(ledger),
        device_store=ingest_device_sources(task, fixtures.fetcher(), denylist),
        platform_store=ingest_platform_docs(profile, fixtures.toc(), denylist),
        web_fetcher=fixtures.fetcher(), denylist=denylist,
    )
    gateway = Gateway(fixtures.provider(config.provider_fixture), ledger,
                      ProviderBudget(max_calls=config.max_calls))
    clock = FixedStepClock()
    device = build_virtual_device(functions, DummyValuePolicy(), clock=clock.now)
    handle = serve_device(device)
    try:
        runner = SandboxRunner(profile, handle.endpoint, timeout=config.sandbox_timeout)
        artifact, report = auto_debug(
            artifact, tests, runner, gateway, toolbox, profile, TemplateSet(),
            AutoDebugConfig(attempt_cap=config.attempt_cap, confirm_suite=config.confirm_suite),
            on_event=_print_event, clock=clock,
        )
    finally:
        handle.close()
    artifact.export(in_dir / "artifact")
    (in_dir / "debug_report.json").write_text(json.dumps(report.to_dict(), indent=2),
                                              encoding="utf-8")
    print(f"revisions made: {report.revisions_made}; "
          f"executions: {report.sandbox_executions}")
    if not report.all_green():
        return _fail("test suite not green after auto debug", "auto_debugging")
    print("suite green")
    return 0


def cmd_hil(args: argparse.Namespace) -> int:
    config = _build_config(args, provider_fixture=args.provider_fixture,
                           hil_responses=args.responses)
    if not config.fixtures_dir:
        return _fail("hil requires --fixtures", "hil_running")
    in_dir = Path(args.input or config.out_dir)
    fixtures = FixtureSet(config.fixtures_dir)
    profile = fixtures.profile()
    artifact = load_artifact_dir(in_dir / "artifact", profile.layout.manifest_path)
    functions = load_functions(in_dir / "functions.json")

    pipeline = Pipeline(config)
    task = pipeline.build_task()
    denylist = fixtures.denylist()
    ledger = TokenLedger()
    toolbox = KnowledgeToolbox(
        ToolContext(ledger),
        device_store=ingest_device_sources(task, fixtures.fetcher(), denylist),
        platform_store=ingest_platform_docs(profile, fixtures.toc(), denylist),
        web_fetcher=fixtures.fetcher(), denylist=denylist,
    )
    gateway = Gateway(fixtures.provider(config.provider_fixture), ledger,
                      ProviderBudget(max_calls=config.max_calls))
    clock = FixedStepClock()
    device = build_virtual_device(functions, DummyValuePolicy(), clock=clock.now)
    handle = serve_device(device)
    checkpoint = Path(config.hil_checkpoint or (in_dir / "hil_checkpoint.json"))
    try:
        if args.resume and checkpoint.exists():
            session = HilSession.load(
                checkpoint, LoopbackAdapter(device), gateway=gateway, toolbox=toolbox,
                profile=profile, templates=TemplateSet(), config=HilConfig(), clock=clock,
            )
            print(f"resumed session {session.session_id} at function "
                  f"{session.current + 1}/{len(session.function_queue)}")
        else:
            session = start_session(
                artifact, functions, LoopbackAdapter(device), gateway, toolbox, profile,
                TemplateSet(), HilConfig(), checkpoint_path=checkpoint, clock=clock,
            )
        if session.status is HilStatus.ABORTED:
            return _fail("device adapter unreachable", "hil_running")
        if config.hil_responses:
            feedback = ScriptedFeedback(fixtures.hil_responses(config.hil_responses))
        else:
            def feedback(probe):
                print(f"\n{probe.question}")
                while True:
                    answer = input("yes/no> ").strip().lower()
                    if answer in ("yes", "no"):
                        return answer
                    print("please answer yes or no")
        run_session(session, feedback)
    finally:
        handle.close()
    artifact.export(in_dir / "artifact")
    total_no = sum(session.per_function_no_count.values())
    if session.status is HilStatus.COMPLETED_ALL_VERIFIED:
        print(f"all functions verified ({total_no} 'no' answers, "
              f"{session.repairs_made} repairs)")
        return 0
    return _fail(f"session ended {session.status.value}; "
                 f"failed functions: {session.failed_functions}", "hil_running")


def cmd_bench(args: argparse.Namespace) -> int:
    config = _build_config(args, bench_runs=args.runs)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for run_index in range(config.bench_runs):
        result = Pipeline(config).run()
        records.append(result.to_run_record(run_index))
        print(f"run {run_index}: usable={result.usable} stage={result.stage.value}")
    write_records(records, out / "records.jsonl")
    reports = aggregate(records)
    write_report(reports, out / "report.json", out / "report.txt")
    print(f"bench report written to {out / 'report.json'}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    app = create_app()
    if args.ui:
        from starlette.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=args.ui, html=True), name="ui")
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _load_tests(path: Path) -> list[TestCase]:
    payload = json.loads(path.read_text(encoding="utf-8"))
    return [
        TestCase(
            test_id=item["test_id"],
            category=TestCategory(item["category"]),
            body=item["body"],
            origin=TestOrigin(item["origin"]),
            target_function=item.get("target_function"),
        )
        for item in payload
    ]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="iotforge",
        description="Synthesize, validate, and interactively repair IoT platform integrations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="build the knowledge stores and snapshot them")
    _add_common(p_ingest)
    p_ingest.set_defaults(func=cmd_ingest)

    p_generate = sub.add_parser("generate", help="run ingest + two-phase generation + auto debug")
    _add_common(p_generate)
    p_generate.add_argument("--retrieval-mode", choices=["progressive", "fixed_one_time"],
                            dest="retrieval_mode")
    p_generate.add_argument("--provider-fixture", dest="provider_fixture")
    p_generate.set_defaults(func=cmd_generate)

    p_autodebug = sub.add_parser("autodebug", help="re-run the test pool with repair on a built artifact")
    _add_common(p_autodebug)
    p_autodebug.add_argument("--input", help="directory produced by generate (default: --out)")
    p_autodebug.add_argument("--provider-fixture", dest="provider_fixture")
    p_autodebug.set_defaults(func=cmd_autodebug)

    p_hil = sub.add_parser("hil", help="hardware-in-the-loop verification (terminal or scripted)")
    _add_common(p_hil)
    p_hil.add_argument("--input", help="directory produced by generate (default: --out)")
    p_hil.add_argument("--provider-fixture", dest="provider_fixture")
    p_hil.add_argument("--responses", help="scripted yes/no answers fixture file")
    p_hil.add_argument("--resume", action="store_true",
                       help="resume from the session checkpoint if one exists")
    p_hil.set_defaults(func=cmd_hil)

    p_bench = sub.add_parser("bench", help="repeat the pipeline and report Pass@1/coverage")
    _add_common(p_bench)
    p_bench.add_argument("--runs", type=int, help="number of runs (default 30)")
    p_bench.set_defaults(func=cmd_bench)

    p_serve = sub.add_parser("serve", help="start the HTTP/SSE session service")
    _add_common(p_serve)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8700)
    p_serve.add_argument("--ui", help="directory with the built web UI to serve statically")
    p_serve.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IotForgeError as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(f"missing input: {exc}")


if __name__ == "__main__":
    sys.exit(main())
