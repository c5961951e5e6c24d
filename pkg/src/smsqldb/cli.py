"""Command-line entry point.

Exit codes: 0 success, 1 acceptance mismatch, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import signal
import sys
import threading
import time
from pathlib import Path
from typing import Any, Sequence

from . import bench
from .errors import ConfigError, SmsDbError
from .gasearch import GaConfig, Selection
from .microdb import (
    Catalog,
    Database,
    ReportMode,
    Table,
    default_catalog,
    default_config,
    default_schema,
    ingest_csv,
    load_catalog,
    parse_config_text,
)
from .server import Node, ServerConfig, StatsCollector
from .smsql import NotFound, to_canonical_sql
from .transport import (
    ClientRegistry,
    FrameFormatError,
    LoopbackTransport,
    SocketTransport,
    decode_frame,
    encode_frame,
)

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2

DEFAULT_SENDER = "0000000001"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 already; keep the message short
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _target_range(text: str) -> range:
    lo, sep, hi = text.partition("..")
    try:
        if not sep:
            v = int(text)
            return range(v, v + 1)
        return range(int(lo), int(hi) + 1)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="GA seed (default 1)")
    common.add_argument("--config", type=Path, help="JSON config (catalog and/or server settings)")
    common.add_argument("--no-ts", action="store_true", help="omit timings from output")
    common.add_argument("--pop-size", type=int)
    common.add_argument("--gens", type=int)
    common.add_argument("--threshold", type=int)
    common.add_argument("--selection", choices=[s.value for s in Selection])
    common.add_argument("-v", "--verbose", action="store_true", help="log to stderr")

    parser = _Parser(prog="smsqldb", description="SMS-SQL micro-database node")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("query", parents=[common], help="answer one query (or a REPL on stdin)")
    p.add_argument("body", nargs="?", help="SMS body; omit to read one query per stdin line")
    p.add_argument("--sender", default=DEFAULT_SENDER)

    p = sub.add_parser("serve", parents=[common], help="run the node until interrupted")
    p.add_argument("--stats", type=Path, help="write STAT lines here (default stderr)")

    p = sub.add_parser("bench-table1", parents=[common], help="replay the published query log")
    p.add_argument("--sweep", type=int, default=0, metavar="N", help="also replay over N seeds")

    p = sub.add_parser("oracle-sweep", parents=[common], help="compare GA against the oracle")
    p.add_argument("--targets", type=_target_range, default=range(0, 16), metavar="LO..HI")
    p.add_argument("--seeds", type=int, default=1000)
    p.add_argument("--db", default="iris")
    p.add_argument("--table", default="iris")
    p.add_argument("--attribute", default="sepl")
    p.add_argument("--no-fallback", action="store_true", help="disable best-so-far fallback")

    p = sub.add_parser("ingest", parents=[common], help="load a CSV file into a table")
    p.add_argument("csv", type=Path)
    p.add_argument("--db", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--mode", choices=[m.value for m in ReportMode], default="verbose")
    p.add_argument("--capacity", type=int)
    p.add_argument("--write-config", type=Path, help="save the resulting catalog as JSON")
    return parser


def load_settings(path: Path | None) -> tuple[Catalog, ServerConfig, dict[str, Any]]:
    if path is None:
        return default_catalog(), ServerConfig(), default_config()
    doc = parse_config_text(path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if "databases" in doc:
        catalog_doc, server_doc = doc, {}
    else:
        catalog_doc = doc.get("catalog", default_config())
        server_doc = doc
    return load_catalog(catalog_doc, base_dir=path.parent), ServerConfig.from_mapping(server_doc), catalog_doc


def ga_config(args: argparse.Namespace, base: GaConfig) -> GaConfig:
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.pop_size is not None:
        overrides["pop_size"] = args.pop_size
    if args.gens is not None:
        overrides["num_gens"] = args.gens
    if args.threshold is not None:
        overrides["fitness_threshold"] = args.threshold
    if args.selection is not None:
        overrides["selection"] = Selection(args.selection)
    if getattr(args, "no_fallback", False):
        overrides["fallback"] = False
    return dataclasses.replace(base, **overrides)


def _answer(node: Node, transport: LoopbackTransport, sender: str, body: str, no_ts: bool) -> int:
    try:
        transport.inject(sender, body)
    except SmsDbError as exc:
        print(f"ERR: {exc}")
        return EXIT_USAGE
    frame = transport.poll_inbox()
    assert frame is not None
    handled = node.process(frame)
    transport.drain_outbox()
    for line in handled.lines:
        print(line)
    if handled.error is not None:
        return EXIT_USAGE
    assert handled.query is not None and handled.result is not None
    res = handled.result
    print(f"sql: {to_canonical_sql(handled.query)}")
    print(
        f"outcome: {res.kind.value} row={res.row} value={res.value} distance={res.distance}"
        f" generations={res.generations_used} evaluations={res.evaluations}"
    )
    if not no_ts:
        print(f"latency_ms: {node.stats.records[-1].latency_ms:.3f}")
    assert handled.report is not None
    return EXIT_MISMATCH if isinstance(handled.report.outcome, NotFound) else EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    catalog, server_cfg, _ = load_settings(args.config)
    cfg = ga_config(args, server_cfg.ga)
    with LoopbackTransport() as transport:
        node = Node(catalog, cfg, transport, ClientRegistry())
        if args.body is not None:
            return _answer(node, transport, args.sender, args.body, args.no_ts)
        status = EXIT_OK
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            if line in ("quit", "exit"):
                break
            status = max(status, _answer(node, transport, args.sender, line, args.no_ts))
            sys.stdout.flush()
        return status


def cmd_bench_table1(args: argparse.Namespace, catalog: Catalog | None = None) -> int:
    if catalog is None:
        catalog, server_cfg, _ = load_settings(args.config)
        base = server_cfg.ga
    else:
        base = GaConfig()
    cfg = ga_config(args, base)
    t0 = time.perf_counter()
    rows = bench.run_table1(catalog, cfg)
    print(f"{'row':<4} {'query':<26} {'expected':<30} {'actual':<30} ok")
    for r in rows:
        print(f"{r.row:<4} {r.body:<26} {r.expected:<30} {r.actual:<30} {'yes' if r.ok else 'NO'}")
    matched = sum(r.ok for r in rows)
    print(f"matched {matched}/{len(rows)} (seed {cfg.rng_seed})")
    ok = matched == len(rows)
    if args.sweep:
        passed, total = bench.table1_seed_sweep(
            catalog, cfg, range(cfg.rng_seed, cfg.rng_seed + args.sweep)
        )
        print(f"seed sweep: {passed}/{total} runs with 4/4 matches")
        ok = ok and passed * 100 >= 99 * total
    if not args.no_ts:
        print(f"elapsed_s: {time.perf_counter() - t0:.3f}")
    for r in rows:
        if not r.ok:
            print(f"- row {r.row}: expected {r.expected!r}")
            print(f"+ row {r.row}: actual   {r.actual!r}")
    return EXIT_OK if ok else EXIT_MISMATCH


def _fmt(value: float | None, pct: bool = False) -> str:
    if value is None:
        return "n/a"
    return f"{100 * value:.1f}%" if pct else f"{value:.2f}"


def cmd_oracle_sweep(args: argparse.Namespace) -> int:
    catalog, server_cfg, _ = load_settings(args.config)
    cfg = ga_config(args, server_cfg.ga)
    table = catalog.table(args.db, args.table)
    t0 = time.perf_counter()
    cells = bench.oracle_sweep(
        table, args.attribute, args.targets, range(cfg.rng_seed, cfg.rng_seed + args.seeds), cfg
    )
    print(f"{'target':>6} {'oracle_d':>8} {'species':<16} {'agree':>7} {'exact':>7} "
          f"{'accept':>7} {'gens':>6} {'gap':>5} {'viol':>5}")
    for c in cells:
        species = c.oracle_species.long_name if c.oracle_species else "(tie)"
        print(
            f"{c.target:>6} {c.oracle_distance:>8} {species:<16} {_fmt(c.agreement_rate, True):>7} "
            f"{_fmt(c.exact / c.runs if c.runs else None, True):>7} "
            f"{_fmt(c.accepted / c.runs if c.runs else None, True):>7} "
            f"{_fmt(c.mean_generations):>6} {_fmt(c.mean_gap):>5} {c.violations:>5}"
        )
    violations = sum(c.violations for c in cells)
    runs = sum(c.runs for c in cells)
    print(f"cells: {runs}  dominance violations: {violations}")
    if not args.no_ts:
        print(f"elapsed_s: {time.perf_counter() - t0:.3f}")
    return EXIT_OK if violations == 0 else EXIT_MISMATCH


def cmd_ingest(args: argparse.Namespace) -> int:
    catalog, _, catalog_doc = load_settings(args.config)
    db = catalog.databases.get(args.db)
    schema = default_schema()
    if db is not None and args.table in db.tables:
        schema = list(db.tables[args.table].schema)
    raw = args.csv.read_text(encoding="utf-8")
    table = ingest_csv(raw, schema, name=args.table, capacity=args.capacity)
    if db is None:
        db = catalog.databases[args.db] = Database(args.db, ReportMode(args.mode))
    db.tables[args.table] = table
    counts: dict[str, int] = {}
    for i, rec in enumerate(table.records):
        label = rec.label.long_name if rec.label else "unclassified"
        counts[label] = counts.get(label, 0) + 1
        print(f"{i}," + ",".join(map(str, rec.values)) + f",{label}")
    summary = ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    print(f"ingested {table.row_count} rows into {args.db}.{args.table} ({summary})")
    if args.write_config:
        args.write_config.write_text(json.dumps(catalog_to_config(catalog), indent=2) + "\n")
        print(f"wrote {args.write_config}")
    return EXIT_OK


def catalog_to_config(catalog: Catalog) -> dict[str, Any]:
    def table_doc(t: Table) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "name": t.name,
            "attributes": [dataclasses.asdict(a) for a in t.schema],
            "rows": [list(r.values) for r in t.records],
        }
        if t.capacity is not None:
            doc["capacity"] = t.capacity
        return doc

    return {
        "databases": [
            {
                "name": db.name,
                "report_mode": db.report_mode.value,
                "tables": [table_doc(t) for t in db.tables.values()],
            }
            for db in catalog.databases.values()
        ]
    }


def _pump_stdin(transport: LoopbackTransport, done: threading.Event) -> None:
    for line in sys.stdin:
        line = line.rstrip("\n")
        if not line.strip():
            continue
        try:
            transport.inject_frame(decode_frame(line))
        except (FrameFormatError, SmsDbError) as exc:
            print(f"ERR|{exc}", file=sys.stderr, flush=True)
    done.set()


def cmd_serve(args: argparse.Namespace) -> int:
    catalog, server_cfg, _ = load_settings(args.config)
    cfg = ga_config(args, server_cfg.ga)
    stats_stream = args.stats.open("a", encoding="utf-8") if args.stats else sys.stderr
    transport: LoopbackTransport
    if server_cfg.loopback:
        transport = LoopbackTransport(delay_ms=server_cfg.delay_ms)
        out_lock = threading.Lock()

        def emit(frame):
            with out_lock:
                print(encode_frame(frame), flush=True)

        transport.listeners.append(emit)
    else:
        transport = SocketTransport(server_cfg.host, server_cfg.port, server_cfg.delay_ms)
    transport.start()
    node = Node(
        catalog,
        cfg,
        transport,
        ClientRegistry(server_cfg.clients),
        concurrency=server_cfg.concurrency,
        idle_threshold=server_cfg.idle_threshold,
        poll_interval_ms=server_cfg.poll_interval_ms,
        stats=StatsCollector(stats_stream),
    )
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: node.stop())
    if server_cfg.loopback:
        eof = threading.Event()
        threading.Thread(target=_pump_stdin, args=(transport, eof), daemon=True).start()

        def stop_when_idle() -> None:
            eof.wait()
            while transport.pending_inbound():
                time.sleep(0.01)
            node.stop()

        threading.Thread(target=stop_when_idle, daemon=True).start()
    else:
        host, port = transport.address  # type: ignore[attr-defined]
        print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
    node.serve()
    transport.stop()
    print(f"exit: {node.exit_reason}", file=sys.stderr)
    return EXIT_OK if node.exit_reason == "shutdown" else EXIT_MISMATCH


COMMANDS = {
    "query": cmd_query,
    "serve": cmd_serve,
    "bench-table1": cmd_bench_table1,
    "oracle-sweep": cmd_oracle_sweep,
    "ingest": cmd_ingest,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (SmsDbError, ValueError, OSError) as exc:
        print(f"ERR: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
