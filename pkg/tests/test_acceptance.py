"""Exit criteria. Each test logs one PASS/FAIL line, shown in the terminal summary."""

from __future__ import annotations

import dataclasses
import random
import string
import threading
import time

import pytest

from smsqldb.bench import oracle_sweep, run_table1, table1_seed_sweep
from smsqldb.errors import QueryError
from smsqldb.gasearch import (
    GaConfig,
    OutcomeKind,
    Population,
    Selection,
    crossover,
    mutate,
    run_search,
    select_parents,
)
from smsqldb.microdb import AttributeSchema, Table, default_catalog
from smsqldb.server import Node, PowerMonitor, PowerState, handle_query, wait_until
from smsqldb.smsql import ParsedQuery, decode_fixed_offset, parse_sms
from smsqldb.transport import ClientRegistry, Direction, LoopbackTransport, SmsFrame, decode_frame, encode_frame

from test_server import reference_power


def record(log, number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
    log.append(line)
    print(line)
    return ok


def test_c1_table1_reproduction(acceptance_log):
    catalog = default_catalog()
    t0 = time.perf_counter()
    rows = run_table1(catalog, GaConfig())
    matched = sum(r.ok for r in rows)
    passed, total = table1_seed_sweep(catalog, GaConfig(), range(1, 101))
    elapsed = time.perf_counter() - t0
    ok = matched == 4 and passed >= 99 and elapsed < 5.0
    detail = f"default seed {matched}/4, sweep {passed}/{total} seeds 4/4, {elapsed:.2f}s (< 5 s)"
    assert record(acceptance_log, 1, "Table 1 reproduction", ok, detail), [r for r in rows if not r.ok]


def _serve(catalog, delay_ms):
    transport = LoopbackTransport(delay_ms=delay_ms).start()
    node = Node(catalog, GaConfig(), transport, poll_interval_ms=1)
    thread = threading.Thread(target=node.serve)
    thread.start()
    return transport, node, thread


def _one_at_a_time(transport, node, bodies, timeout):
    for i, body in enumerate(bodies):
        transport.inject(str(100 + i), body)
        assert wait_until(lambda: len(node.stats.records) == i + 1, timeout=timeout)
    return [s.latency_ms for s in node.stats.records]


def test_c2_latency(acceptance_log):
    catalog = default_catalog()
    bodies = [
        "dbiris tbiris atsepl va2",
        "dbiris tbiris atsepl va8",
        "dburis tbiris atsepl va6",
        "dbiris tbiris atsepl va15",
        "dburis tbiris atsepl va0",
    ] * 4
    transport, node, thread = _serve(catalog, 0)
    try:
        loopback = _one_at_a_time(transport, node, bodies, 5)
    finally:
        node.stop()
        thread.join()
        transport.stop()

    transport, node, thread = _serve(catalog, 2000)
    try:
        delayed = _one_at_a_time(transport, node, ["dbiris tbiris atsepl va8"], 10)[0]
    finally:
        node.stop()
        thread.join()
        transport.stop()

    ok = max(loopback) < 100 and 2000 <= delayed < 2000 + 100
    detail = (
        f"loopback max {max(loopback):.2f} ms over {len(loopback)} queries (< 100 ms); "
        f"with 2000 ms delay {delayed:.1f} ms (2000 + processing)"
    )
    assert record(acceptance_log, 2, "latency", ok, detail)


def test_c3_oracle_dominance(acceptance_log):
    table = default_catalog().table("iris", "iris")
    t0 = time.perf_counter()
    cells = oracle_sweep(table, "sepl", range(16), range(1000), GaConfig())
    elapsed = time.perf_counter() - t0
    runs = sum(c.runs for c in cells)
    violations = sum(c.violations for c in cells)
    unique = [c for c in cells if c.oracle_species is not None]
    worst = min(c.agreement_rate for c in unique)
    ok = runs == 16_000 and violations == 0 and len(unique) == 16 and worst >= 0.99 and elapsed < 60
    detail = (
        f"{runs} cells, {violations} dominance violations, min species agreement "
        f"{100 * worst:.1f}% over {len(unique)} unique-species targets, {elapsed:.1f}s (< 60 s)"
    )
    assert record(acceptance_log, 3, "oracle dominance", ok, detail)


def test_c4_in_range_exactness(acceptance_log):
    table = default_catalog().table("iris", "iris")
    exact_rates = {}
    for target in range(4, 8):
        hits = 0
        for seed in range(1000):
            res = run_search(GaConfig(rng_seed=seed, fitness_threshold=0), table, "sepl", target)
            hits += res.distance == 0 and res.generations_used <= 40
        exact_rates[target] = hits / 1000
    accept = {}
    for target in range(4, 9):
        cfg = GaConfig(fitness_threshold=1, fallback=False)
        ok_runs = 0
        for seed in range(1000):
            res = run_search(dataclasses.replace(cfg, rng_seed=seed), table, "sepl", target)
            ok_runs += res.kind is not OutcomeKind.NOT_FOUND and res.distance <= 1
        accept[target] = ok_runs / 1000
    ok = min(exact_rates.values()) >= 0.95 and min(accept.values()) == 1.0
    detail = (
        "fit=0 rate " + ", ".join(f"{t}:{100 * r:.1f}%" for t, r in exact_rates.items())
        + "; threshold-1 acceptance " + ", ".join(f"{t}:{100 * r:.0f}%" for t, r in accept.items())
    )
    assert record(acceptance_log, 4, "in-range exactness", ok, detail)


def test_c5_ga_closure_properties(acceptance_log):
    rng = random.Random(20240208)
    violations = {"range": 0, "convexity": 0, "mutation": 0, "monotone": 0}
    cases = 10_000
    for _ in range(cases):
        row_count = rng.randint(1, 40)
        pop_size = 2 * rng.randint(1, 12)
        cfg = GaConfig(
            pop_size=pop_size,
            num_gens=rng.randint(1, 8),
            num_muts=rng.randint(0, 4),
            fitness_threshold=rng.randint(0, 2),
            selection=rng.choice(list(Selection)),
            rng_seed=rng.getrandbits(64),
        )
        pop = Population(tuple(rng.randrange(row_count) for _ in range(pop_size)))
        fits = tuple(rng.randint(0, 9) for _ in range(pop_size))
        op_rng = random.Random(rng.getrandbits(64))

        parents = select_parents(op_rng, pop, fits, cfg.selection)
        children = crossover(op_rng, parents, row_count)
        mutated = mutate(op_rng, children, cfg, row_count)
        for genes in (parents.genes, children.genes, mutated.genes):
            violations["range"] += any(not 0 <= g < row_count for g in genes)
        for i in range(0, pop_size, 2):
            lo, hi = sorted(parents.genes[i : i + 2])
            violations["convexity"] += any(not lo <= c <= hi for c in children.genes[i : i + 2])
        violations["mutation"] += sum(a != b for a, b in zip(children.genes, mutated.genes)) > cfg.num_muts

        values = [rng.randint(0, 12) for _ in range(row_count)]
        table = Table("t", [AttributeSchema("k", 0, 12, is_key=True)], [[v] for v in values])
        trace = run_search(cfg, table, "k", rng.randint(0, 15)).best_trace
        violations["monotone"] += any(b > a for a, b in zip(trace, trace[1:]))
    ok = not any(violations.values())
    detail = f"{cases} cases, violations {violations}"
    assert record(acceptance_log, 5, "GA closure properties", ok, detail)


def _fuzz_bodies(rng, n):
    valid = ["dbiris", "tbiris", "atsepl", "va8", "dburis", "va6", "DB1", "tb1", "at1", "va4"]
    alphabet = string.printable + "|\\\x00é漢"
    for i in range(n):
        kind = i % 4
        if kind == 0:
            yield bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 1024)))
        elif kind == 1:
            yield "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 1024)))
        elif kind == 2:
            toks = rng.sample(valid, rng.randint(0, len(valid)))
            yield rng.choice([" ", "  ", "\t", "\n"]).join(toks)
        else:
            body = list(rng.choice(["dbiris tbiris atsepl va8", "dburis tbiris atsepl va6"]))
            for _ in range(rng.randint(1, 4)):
                pos = rng.randrange(len(body) + 1)
                op = rng.random()
                if op < 0.4 and body:
                    body[min(pos, len(body) - 1)] = rng.choice(alphabet)
                elif op < 0.7:
                    body.insert(pos, rng.choice(alphabet))
                elif body:
                    del body[min(pos, len(body) - 1)]
            yield "".join(body)


def test_c6_parser_robustness(acceptance_log):
    rng = random.Random(1602)
    crashes = parsed = errors = 0
    for body in _fuzz_bodies(rng, 100_000):
        assert len(body) <= 1024
        try:
            result = parse_sms(body)
        except QueryError:
            errors += 1
        except Exception:  # noqa: BLE001 - any other exception is a crash
            crashes += 1
        else:
            parsed += isinstance(result, ParsedQuery)
    names = string.ascii_lowercase + string.digits
    disagreements = 0
    shaped = ["dbiris tbiris atsepl va2", "dbiris tbiris atsepl va8", "dburis tbiris atsepl va6"]
    shaped += [
        "db{} tb{} at{} va{}".format(*("".join(rng.choice(names) for _ in range(4)) for _ in range(3)), d)
        for d in range(10)
        for _ in range(1000)
    ]
    for body in shaped:
        target, _ = decode_fixed_offset(body)
        disagreements += target != parse_sms(body).target or str(target) != body[23]
    ok = crashes == 0 and parsed + errors == 100_000 and disagreements == 0
    detail = (
        f"100000 bodies: {parsed} parsed, {errors} structured errors, {crashes} crashes; "
        f"{len(shaped)} paper-shaped queries, {disagreements} offset/token disagreements"
    )
    assert record(acceptance_log, 6, "parser robustness", ok, detail)


def test_c7_wire_round_trip(acceptance_log):
    rng = random.Random(7)
    heavy = "|\\|\\||\\\\ abcMSG|I|0|"
    other = string.printable.replace("\n", "").replace("\r", "") + "é€漢\x00"
    failures = 0
    for i in range(10_000):
        pool = heavy if i % 2 == 0 else other
        body = "".join(rng.choice(pool) for _ in range(rng.randint(0, 160)))
        peer = "".join(rng.choice("0123456789+") for _ in range(rng.randint(1, 20)))
        frame = SmsFrame(rng.choice(list(Direction)), peer, body, rng.randint(0, 2**40))
        failures += decode_frame(encode_frame(frame)) != frame
    ok = failures == 0
    assert record(acceptance_log, 7, "wire round-trip", ok, f"10000 frames, {failures} violations")


def test_c8_concurrency_correctness(acceptance_log):
    catalog = default_catalog()
    cfg = GaConfig()
    rng = random.Random(88)
    queries = {}
    for i in range(100):
        db = rng.choice(["iris", "uris"])
        attr = rng.choice(["sepl", "sepl", "petl"])
        queries[f"{10_000 + i}"] = f"db{db} tbiris at{attr} va{rng.randint(0, 15)}"
    expected = {
        peer: handle_query(SmsFrame(Direction.INBOUND, peer, body, 0), catalog, cfg).lines
        for peer, body in queries.items()
    }

    transport = LoopbackTransport().start()
    node = Node(catalog, cfg, transport, ClientRegistry(), concurrency=2, poll_interval_ms=1)
    thread = threading.Thread(target=node.serve)
    thread.start()
    try:
        injectors = []
        items = list(queries.items())
        for half in (items[0::2], items[1::2]):
            t = threading.Thread(target=lambda h=half: [transport.inject(p, b) for p, b in h])
            injectors.append(t)
            t.start()
        for t in injectors:
            t.join()
        assert wait_until(lambda: len(node.stats.records) == 100, timeout=30)
    finally:
        node.stop()
        thread.join()
        transport.stop()

    got: dict[str, list[str]] = {}
    for f in transport.drain_outbox():
        got.setdefault(f.peer_id, []).append(f.body)
    cross = sum(got.get(peer) != lines for peer, lines in expected.items()) + len(set(got) - set(expected))
    by_id = {h.query_id: h for h in node.handled}
    event_mismatch = sum(by_id[e.query_id].event != e for e in node.events)

    automaton_failures = 0
    sequences = 0
    for threshold in (1, 2, 3, 4, 10):
        for n in range(13):
            for bits in range(2**n):
                seq = "".join("F" if bits >> k & 1 else "." for k in range(n))
                pm = PowerMonitor(threshold)
                for ch in seq:
                    pm.on_poll(ch == "F")
                sequences += 1
                automaton_failures += (pm.state, pm.idle_polls, pm.wake_count) != reference_power(seq, threshold)
    ok = cross == 0 and event_mismatch == 0 and automaton_failures == 0
    detail = (
        f"100 tagged queries at P=2: {cross} cross-correlations, {event_mismatch} event mismatches; "
        f"power automaton {sequences} sequences, {automaton_failures} failures"
    )
    assert record(acceptance_log, 8, "concurrency correctness", ok, detail)
