"""Acceptance gate: one test per acceptance criterion, stated tolerances.

Each criterion prints one PASS/FAIL line (visible with `pytest -s` or in
captured output). Run:  pytest tests/test_acceptance.py -v

The UI stream-fidelity criterion lives in frontend/tests/state.test.ts
(vitest), replaying event fixtures recorded from real service runs; this
suite has no dependency on the frontend being built.
"""

import json
import random
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from iotforge.autodebug import Classification
from iotforge.config import load_config
from iotforge.fixtures import FixtureSet, ScriptedFeedback
from iotforge.harness import TestCategory, Verdict
from iotforge.hil import HilStatus, LoopbackAdapter, run_session, start_session
from iotforge.knowledge import (
    KnowledgeChunk,
    VectorIndex,
    ingest_device_sources,
    ingest_platform_docs,
)
from iotforge.llm import count_tokens
from iotforge.metrics import pass_at_k, pass_at_k_fraction
from iotforge.model import DeviceTier, classify_tier
from iotforge.pipeline import Pipeline, Stage
from iotforge.virtualdevice import build_virtual_device

from oracles import brute_force_knn, monte_carlo_pass_at_k


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    print(f"ACCEPTANCE {name}: PASS")


def _config(thermo_dir, tmp_path, **overrides):
    base = {"fixtures_dir": str(thermo_dir), "out_dir": str(tmp_path / "out")}
    base.update(overrides)
    return load_config(None, base)


def test_knn_oracle_equivalence():
    """1,000 random 32-dim vectors, 50 queries, k=10: identical to the
    independent brute-force double loop, in under 5 seconds."""
    with criterion("knn-oracle-equivalence"):
        started = time.monotonic()
        rng = np.random.default_rng(321)
        vectors = rng.standard_normal((1000, 32)).astype(np.float32)
        ids = [f"chunk{i:04d}" for i in range(1000)]
        index = VectorIndex(32)
        for chunk_id, vector in zip(ids, vectors):
            index.add(KnowledgeChunk(chunk_id, "loc", "text", vector, 1))
        vector_rows = vectors.tolist()
        for _ in range(50):
            query = rng.standard_normal(32).astype(np.float32)
            expected = brute_force_knn(vector_rows, ids, query.astype(float).tolist(), 10)
            actual = index.knn(query, 10)
            assert actual == expected  # exact match on ids and distances
        elapsed = time.monotonic() - started
        assert elapsed < 5.0, f"took {elapsed:.2f}s"


def test_pass_at_k_correctness():
    """k=1 equals c/n exactly for n=30; (20,7,3) within 2e-3 of a 1e6-sample
    Monte-Carlo oracle, in under 30 seconds."""
    with criterion("pass-at-k-correctness"):
        started = time.monotonic()
        n = 30
        for c in range(n + 1):
            assert pass_at_k_fraction(n, c, 1) == Fraction(c, n)
        estimate = monte_carlo_pass_at_k(20, 7, 3, samples=1_000_000, seed=424242)
        assert abs(pass_at_k(20, 7, 3) - estimate) < 2e-3
        elapsed = time.monotonic() - started
        assert elapsed < 30.0, f"took {elapsed:.2f}s"


def test_tier_classification_boundaries():
    """Boundary table {1,6 -> Tier1; 7,10 -> Tier2; 11 -> Tier3}, exact."""
    with criterion("tier-classification"):
        assert classify_tier(1) is DeviceTier.TIER1
        assert classify_tier(6) is DeviceTier.TIER1
        assert classify_tier(7) is DeviceTier.TIER2
        assert classify_tier(10) is DeviceTier.TIER2
        assert classify_tier(11) is DeviceTier.TIER3


def test_end_to_end_offline_determinism(thermo_dir, tmp_path):
    """The bundled fixture runs generate->autodebug twice: artifacts byte
    identical, every generated basic + functionality test passes, < 60 s."""
    with criterion("e2e-offline-determinism"):
        started = time.monotonic()
        results = [Pipeline(_config(thermo_dir, tmp_path)).run() for _ in range(2)]
        for result in results:
            assert result.stage is Stage.DONE and result.usable
            categories = {t.category for t in result.tests}
            assert {TestCategory.REGISTRATION, TestCategory.SERVICE_INVOCATION,
                    TestCategory.CONFIG_ENTRY, TestCategory.FUNCTIONALITY} <= categories
            for outcome in result.debug_report.outcomes:
                assert outcome.final_verdict is Verdict.PASSED, outcome
        first, second = results
        assert first.artifact.files == second.artifact.files  # byte identical
        assert first.generation.trace == second.generation.trace
        assert first.ledger_snapshot == second.ledger_snapshot
        elapsed = time.monotonic() - started
        assert elapsed < 60.0, f"took {elapsed:.2f}s"


def test_retrieval_mode_ablation(thermo_dir, tmp_path):
    """Progressive retrieval consumes strictly fewer retrieved-knowledge
    tokens than fixed one-time retrieval on the same fixture."""
    with criterion("retrieval-mode-ablation"):
        progressive = Pipeline(_config(thermo_dir, tmp_path)).run()
        fixed = Pipeline(_config(thermo_dir, tmp_path,
                                 provider_fixture="provider_fixed.yaml",
                                 retrieval_mode="fixed_one_time")).run()
        assert progressive.usable and fixed.usable
        progressive_tokens = progressive.ledger_snapshot["total"]["retrieved_knowledge"]
        fixed_tokens = fixed.ledger_snapshot["total"]["retrieved_knowledge"]
        assert progressive_tokens < fixed_tokens, (progressive_tokens, fixed_tokens)


def test_auto_debugger_repair(thermo_dir, tmp_path):
    """Injected failing functionality test + scripted fix: exactly the failed
    test re-runs, suite ends green, revision +1, classification fixed."""
    with criterion("auto-debugger-repair"):
        result = Pipeline(_config(thermo_dir, tmp_path,
                                  provider_fixture="provider_buggy.yaml")).run()
        assert result.usable
        assert result.artifact.revision == 1
        outcomes = {o.test_id: o for o in result.debug_report.outcomes}
        fixed = [o for o in outcomes.values() if o.classification is Classification.FIXED]
        assert len(fixed) == 1 and fixed[0].test_id == "func_update_g2"
        assert fixed[0].final_verdict is Verdict.PASSED
        # exactly the failed test was re-run; everything else ran once
        for outcome in outcomes.values():
            assert outcome.executions == (2 if outcome.test_id == "func_update_g2" else 1)
        assert result.debug_report.all_green()


def test_hil_cap_property():
    """1,000 randomized feedback streams: no-counts never exceed 10, every
    session terminates within |functions| x 11 probes, and each counted "no"
    re-probes the same function."""
    from iotforge.model import FunctionDescriptor, FunctionKind
    from iotforge.model import IntegrationArtifact

    with criterion("hil-cap-property"):
        rng = random.Random(77)
        for _ in range(1000):
            n_functions = rng.randint(1, 3)
            functions = [FunctionDescriptor(f"f{i}", f"fn {i}", FunctionKind.UNARY_COMMAND)
                         for i in range(n_functions)]
            artifact = IntegrationArtifact.create(
                "a", {"manifest.json": json.dumps({"name": "x"})}, "manifest.json")
            device = build_virtual_device(functions)
            session = start_session(artifact, functions, LoopbackAdapter(device))
            probes = 0
            while session.status is HilStatus.RUNNING:
                probe = session.next_probe()
                if probe is None:
                    break
                probes += 1
                answer = "yes" if rng.random() < 0.4 else "no"
                before = session.per_function_no_count[probe.function_id]
                session.submit_feedback(answer)
                after = session.per_function_no_count[probe.function_id]
                assert all(v <= 10 for v in session.per_function_no_count.values())
                if answer == "no" and after == before + 1 and session.status is HilStatus.RUNNING:
                    next_fn = session.function_queue[session.current].function_id
                    assert next_fn == probe.function_id  # re-probe locality
            assert probes <= n_functions * 11
            assert session.status in (HilStatus.COMPLETED_ALL_VERIFIED,
                                      HilStatus.COMPLETED_WITH_FAILURES)


def test_hil_happy_path_single_no(thermo_dir, tmp_path):
    """Scripted responder: one "no" on one function plus a scripted fix ends
    completed_all_verified with a total no-count of one."""
    from iotforge.clocks import FixedStepClock
    from iotforge.knowledge import KnowledgeToolbox, ToolContext
    from iotforge.llm import Gateway, ProviderBudget, TokenLedger
    from iotforge.prompts import TemplateSet
    from iotforge.virtualdevice import DummyValuePolicy

    with criterion("hil-happy-path"):
        result = Pipeline(_config(thermo_dir, tmp_path)).run()
        assert result.usable

        fixtures = FixtureSet(thermo_dir)
        profile = fixtures.profile()
        denylist = fixtures.denylist()
        ledger = TokenLedger()
        toolbox = KnowledgeToolbox(
            ToolContext(ledger),
            device_store=ingest_device_sources(fixtures.task(), fixtures.fetcher(), denylist),
            platform_store=ingest_platform_docs(profile, fixtures.toc(), denylist),
            web_fetcher=fixtures.fetcher(), denylist=denylist)
        gateway = Gateway(fixtures.provider("provider_hil.yaml"), ledger, ProviderBudget())
        clock = FixedStepClock()
        device = build_virtual_device(result.functions, DummyValuePolicy(), clock=clock.now)
        session = start_session(result.artifact.copy(), result.functions,
                                LoopbackAdapter(device), gateway, toolbox, profile,
                                TemplateSet(), clock=clock)
        run_session(session, ScriptedFeedback(fixtures.hil_responses("responses_one_no.yaml")))
        assert session.status is HilStatus.COMPLETED_ALL_VERIFIED
        assert sum(session.per_function_no_count.values()) == 1
        assert session.artifact.revision == result.artifact.revision + 1
        assert session.repairs_made == 1


def test_leakage_screening(thermo_dir, tmp_path):
    """The denylisted fixture document never appears in any index or any
    tool result, checked exhaustively over the e2e run's retrievals."""
    with criterion("leakage-screening"):
        fixtures = FixtureSet(thermo_dir)
        denylist = fixtures.denylist()
        events = []
        pipeline = Pipeline(_config(thermo_dir, tmp_path),
                            on_event=lambda e, d: events.append((e, d)))
        result = pipeline.run()
        assert result.usable

        # the poisoned document was fetched and screened out
        device_store = ingest_device_sources(fixtures.task(), fixtures.fetcher(), denylist)
        assert any("official_integration" in rec.locator for rec in device_store.exclusions)

        # no index holds it
        platform_store = ingest_platform_docs(fixtures.profile(), fixtures.toc(), denylist)
        for store in (device_store, platform_store):
            for index in store.indexes.values():
                for chunk in index.chunks:
                    assert denylist.matches(chunk.parent_locator, chunk.text) is None

        # no tool call ever returned it (exhaustive over the run's retrievals)
        retrievals = [d for e, d in events if e == "retrieval"]
        assert retrievals, "expected at least one audited retrieval"
        for entry in retrievals:
            for locator, text in zip(entry["locators"], entry["texts"]):
                assert denylist.matches(locator, text) is None
        assert "LEAKED_GROUND_TRUTH" not in json.dumps(retrievals)


def test_ablation_toggles_degrade(thermo_dir, tmp_path):
    """Platform store off: generation fails fast. Automated debugger off on
    the buggy fixture: failing suite; debugger on: green suite."""
    with criterion("ablation-toggles"):
        no_platform = Pipeline(_config(thermo_dir, tmp_path,
                                       platform_kb_enabled=False)).run()
        assert no_platform.stage is Stage.FAILED
        assert no_platform.generation is None  # failed before generating anything
        assert "platform" in no_platform.failure_reason.lower()

        no_debugger = Pipeline(_config(thermo_dir, tmp_path,
                                       provider_fixture="provider_buggy.yaml",
                                       auto_debug_enabled=False)).run()
        assert not no_debugger.usable
        failing = [o for o in no_debugger.debug_report.outcomes
                   if o.final_verdict is not Verdict.PASSED]
        assert failing, "injected bug must surface without the debugger"

        full = Pipeline(_config(thermo_dir, tmp_path,
                                provider_fixture="provider_buggy.yaml")).run()
        assert full.usable and full.debug_report.all_green()
