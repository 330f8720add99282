"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criterion 10 needs a live multimodal backend and is documented as a skip;
see README.md for the manual procedure.
"""

import json
import math
import os
import random
import time
from contextlib import contextmanager

import httpx
import pytest

from quake3m.assess import PipelineConfig, assess_batch, outcome_counts
from quake3m.corpus import bundled_libraries, filter_damage_related, load_corpus
from quake3m.geo import GeoPoint, haversine_km
from quake3m.mllm import BackendProfile, ChatClient, Mode, TranscriptWriter
from quake3m.prompts import Modality, ParseError, SchemaViolationError, parse_damage_response
from quake3m.validate import (
    NARRATIVE_BUCKETS,
    SENSITIVITY_COLUMNS,
    city_correlation,
    cramers_v,
    distance_attenuation,
    join_with_dyfi,
    krippendorff_alpha,
    pearson_r,
    prompt_sensitivity,
    tfidf_by_mmi,
)
from quake3m.assess import aggregate_by_city
from support import (
    EVENT,
    FIXTURES,
    RIDGECREST,
    SCRIPT_BACKEND,
    PlantedResponder,
    constant_damage,
    load_mock100,
    mock100_responder,
    planted_table_corpus,
    script_client,
    synthetic_field,
    wire_handler,
)

LOS_ANGELES = GeoPoint(34.0522, -118.2437)


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def run(number, title, budget_s=None):
        t0 = time.perf_counter()
        ok = False
        try:
            yield
            elapsed = time.perf_counter() - t0
            if budget_s is not None:
                assert elapsed < budget_s, f"took {elapsed:.2f}s, budget {budget_s}s"
            ok = True
        finally:
            elapsed = time.perf_counter() - t0
            with capsys.disabled():
                status = "PASS" if ok else "FAIL"
                print(f"\ncriterion {number:>2} {status} ({elapsed:.2f}s) {title}")
    return run


def _vector_distance(a, b):
    # independent great-circle oracle via unit vectors and atan2
    def vec(p):
        la, lo = math.radians(p.lat), math.radians(p.lon)
        return (math.cos(la) * math.cos(lo), math.cos(la) * math.sin(lo), math.sin(la))

    u, v = vec(a), vec(b)
    cross = (u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0])
    return 6371.0 * math.atan2(math.sqrt(sum(c * c for c in cross)), sum(x * y for x, y in zip(u, v)))


def _alpha_direct(a, b):
    n = len(a)
    do = sum(x != y for x, y in zip(a, b)) / n
    pooled = list(a) + list(b)
    p = {c: pooled.count(c) / (2 * n) for c in set(pooled)}
    de = 1 - sum(q * q for q in p.values())
    return 1 - do / de


def test_criterion_01_metric_oracles(criterion):
    with criterion(1, "metric oracles", budget_s=1):
        assert pearson_r([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8, abs=1e-9)
        assert cramers_v([[10, 0], [0, 10]]) == pytest.approx(1.0, abs=1e-9)
        assert cramers_v([[5, 5], [5, 5]]) == pytest.approx(0.0, abs=1e-9)
        assert cramers_v([[6, 4], [4, 6]]) == pytest.approx(0.2, abs=1e-9)
        assert krippendorff_alpha([1, 1, 2], [1, 2, 2]) == pytest.approx(1 / 3, abs=1e-9)
        assert krippendorff_alpha([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-9)
        assert krippendorff_alpha([1, 2], [2, 1]) == pytest.approx(-1.0, abs=1e-9)


def test_criterion_02_brute_force_equivalence(criterion):
    rng = random.Random(2024)
    with criterion(2, "brute-force alpha and V invariances", budget_s=10):
        done = 0
        while done < 1000:
            n = rng.randint(1, 6)
            k = rng.randint(1, 3)
            a = [rng.randrange(k) for _ in range(n)]
            b = [rng.randrange(k) for _ in range(n)]
            if len(set(a + b)) < 2:
                continue  # no chance disagreement, alpha undefined
            assert abs(krippendorff_alpha(a, b) - _alpha_direct(a, b)) <= 1e-12
            done += 1
        done = 0
        while done < 1000:
            r, c = rng.randint(2, 4), rng.randint(2, 4)
            t = [[rng.randint(0, 20) for _ in range(c)] for _ in range(r)]
            if not all(map(sum, t)) or not all(map(sum, zip(*t))):
                continue
            v = cramers_v(t)
            assert 0.0 <= v <= 1.0 + 1e-12
            rows = rng.sample(t, r)
            cols = rng.sample(range(c), c)
            assert cramers_v([[row[j] for j in cols] for row in rows]) == pytest.approx(v, abs=1e-12)
            m = rng.randint(2, 9)
            assert cramers_v([[m * x for x in row] for row in t]) == pytest.approx(v, abs=1e-12)
            done += 1


def test_criterion_03_geodesy(criterion):
    rng = random.Random(3)
    with criterion(3, "haversine properties and Ridgecrest to Los Angeles", budget_s=5):
        def pt():
            return GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))

        for _ in range(10_000):
            a, b, c = pt(), pt(), pt()
            assert haversine_km(a, a) == 0.0
            ab = haversine_km(a, b)
            assert ab == pytest.approx(haversine_km(b, a), abs=1e-9)
            assert ab <= haversine_km(a, c) + haversine_km(c, b) + 1e-6
            assert 0 <= ab <= math.pi * 6371.0 + 1e-6
        d = haversine_km(RIDGECREST, LOS_ANGELES)
        assert d == pytest.approx(_vector_distance(RIDGECREST, LOS_ANGELES), abs=1e-6)
        assert abs(d - 199) <= 2


def test_criterion_04_synthetic_end_to_end(criterion):
    with criterion(4, "synthetic end-to-end recovery", budget_s=60):
        tweets, truth, dyfi = synthetic_field(n=500, seed=7)
        pipe = PipelineConfig(EVENT, SCRIPT_BACKEND, modality=Modality.TEXT_ONLY, parallelism=1)
        records = assess_batch(tweets, pipe, script_client(PlantedResponder(truth, noise=1, seed=0)))
        assert outcome_counts(records)["assessed"] == 500
        joined = join_with_dyfi(aggregate_by_city(records), dyfi, 30)
        r_city = city_correlation(joined.matched)
        r_dist, _ = distance_attenuation(records, RIDGECREST)
        print(f"\n  city r = {r_city:.4f} over {len(joined.matched)} cities, distance r = {r_dist:.4f}")
        assert r_city >= 0.90
        assert r_dist <= -0.85


def test_criterion_05_filter(criterion):
    path = FIXTURES / "filter_200.jsonl"
    planted = {json.loads(line)["id"] for line in path.read_text(encoding="utf-8").splitlines()
               if json.loads(line)["planted"]}
    libs = bundled_libraries()
    with criterion(5, "filter correctness", budget_s=1):
        records = load_corpus(path).records
        kept = filter_damage_related(records, libs)
        assert len(records) == 200 and len(planted) == 120
        assert {r.id for r in kept} == planted
        assert filter_damage_related(kept, libs) == kept


def test_criterion_06_parser_robustness(criterion):
    cases = json.loads((FIXTURES / "malformed_outputs.json").read_text(encoding="utf-8"))
    rng = random.Random(6)
    with criterion(6, "parser robustness", budget_s=30):
        assert len(cases) == 20
        parsed = rejected = 0
        for case in cases:
            if case["expect"] is None:
                with pytest.raises(SchemaViolationError):
                    parse_damage_response(case["raw"])
                rejected += 1
            else:
                v = parse_damage_response(case["raw"])
                assert {k: getattr(v, k) for k in case["expect"]} == case["expect"]
                parsed += 1
        assert parsed >= 18 and rejected == 2
        for _ in range(100_000):
            blob = rng.randbytes(rng.randint(0, 64))
            try:
                parse_damage_response(blob)
            except ParseError:
                pass


def test_criterion_07_determinism(criterion, tmp_path):
    corpus, _ = load_mock100()
    with criterion(7, "determinism under concurrency and replay"):
        for p in (1, 8):
            pipe = PipelineConfig(EVENT, SCRIPT_BACKEND, modality=Modality.TEXT_ONLY, parallelism=p)
            assess_batch(corpus, pipe, script_client(mock100_responder()), out_path=tmp_path / f"p{p}.jsonl")
        assert (tmp_path / "p1.jsonl").read_bytes() == (tmp_path / "p8.jsonl").read_bytes()

        live = BackendProfile("mock", "mock-model", base_url="https://llm.example/v1", requests_per_minute=10**6)
        with TranscriptWriter(tmp_path / "t.jsonl") as w:
            client = ChatClient(live, transport=httpx.MockTransport(wire_handler(mock100_responder())),
                                api_key="k", recorder=w)
            assess_batch(corpus, PipelineConfig(EVENT, live, modality=Modality.TEXT_ONLY), client,
                         out_path=tmp_path / "live.jsonl")
        replay = BackendProfile("mock", "mock-model", mode=Mode.REPLAY, transcript=str(tmp_path / "t.jsonl"))
        assess_batch(corpus, PipelineConfig(EVENT, replay, modality=Modality.TEXT_ONLY, parallelism=8),
                     ChatClient(replay), out_path=tmp_path / "replay.jsonl")
        assert (tmp_path / "replay.jsonl").read_bytes() == (tmp_path / "live.jsonl").read_bytes()


def test_criterion_08_sensitivity(criterion):
    with criterion(8, "sensitivity harness"):
        corpus, responder = planted_table_corpus()
        runs = {}
        client = script_client(responder)
        for v in ("v1", "v2"):
            pipe = PipelineConfig(EVENT, SCRIPT_BACKEND, modality=Modality.TEXT_ONLY, prompt_version=v)
            runs[v] = assess_batch(corpus, pipe, client, damage_only=True)
        assert prompt_sensitivity(runs).association("damage_type").cramers_v == pytest.approx(0.2, abs=1e-9)

        versions = [f"v{i}" for i in range(1, 8)]
        const = {}
        client = script_client(constant_damage)
        for v in versions:
            pipe = PipelineConfig(EVENT, SCRIPT_BACKEND, modality=Modality.TEXT_ONLY, prompt_version=v)
            const[v] = assess_batch(corpus, pipe, client, damage_only=True)
        rep = prompt_sensitivity(const)
        assert all(s.dl_std == 0 for s in rep.versions)
        assert SENSITIVITY_COLUMNS == ("version", "n", "DL_mean", "DL_std", "Conf_mean", "Conf_std")
        assert [row["version"] for row in rep.to_dict()["versions"]] == versions


def test_criterion_09_tfidf(criterion):
    from quake3m.assess import AssessmentRecord, Outcome
    from quake3m.geo import ResolvedLocation, Tier
    from quake3m.prompts import DamageVerdict

    def rec(i, level, text):
        loc = ResolvedLocation(f"C{i}", RIDGECREST, Tier.GEOTAG)
        return AssessmentRecord(str(i), loc, Outcome.ASSESSED, "m", "text_only", "v1", "Yes",
                                DamageVerdict(1, "Exterior", level, 0.9, text), 0.0)

    with criterion(9, "TF-IDF"):
        recs = [rec(1, 2, "tremor shaking felt"), rec(2, 4, "tremor chimney chimney shaking"),
                rec(3, 7, "tremor collapsed shaking")]
        out = tfidf_by_mmi(recs, NARRATIVE_BUCKETS, top_k=10, stopwords=set())
        assert len(out) == 3
        for terms in out.values():
            assert "tremor" not in dict(terms) and "shaking" not in dict(terms)
        top_term, top_score = out["4-5"][0]
        assert top_term == "chimney"
        assert abs(top_score - 2 * math.log(3)) <= 1e-12


@pytest.mark.skipif(not os.environ.get("QUAKE3M_LIVE_BACKEND"),
                    reason="criterion 10 is a manual live-backend check; see README")
def test_criterion_10_live_el_monte(criterion):
    # Manual: set QUAKE3M_LIVE_BACKEND to a JSON backend object (model_id, base_url)
    # and the matching QUAKE3M_API_KEY_<NAME> credential. Output is non-deterministic.
    from quake3m.prompts import render_damage_prompt
    from support import record

    spec = json.loads(os.environ["QUAKE3M_LIVE_BACKEND"])
    backend = BackendProfile(spec.get("name", "live"), spec["model_id"], base_url=spec["base_url"])
    tweet = record("em1", "6.4 earthquake just broke my friend's window in El Monte", media=("media/window.png",))
    with criterion(10, "live El Monte example"):
        with ChatClient(backend) as client:
            reply = client.complete(render_damage_prompt(tweet, Modality.FUSION, "v1", media_root=FIXTURES))
        verdict = parse_damage_response(reply.text)
        assert 3 <= verdict.damage_level <= 5
