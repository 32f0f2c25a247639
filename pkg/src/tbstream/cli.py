"""Command-line entry point: one binary exposing the full pipeline.

Subcommands: gen, ingest, convert, classify, pipeline run|bench,
query run, metrics, reason retrieve|score|suggest|apply|explain,
bus publish|consume|topics|fail|recover, store load|dump|stats.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import bundled
from .bus import BusError, StreamBus, TopicSpec
from .cep import (
    BenchRow,
    CallbackSink,
    GraphWritebackSink,
    JsonlAlertSink,
    Pipeline,
    WindowKind,
    WindowSpec,
    bench,
    encode_event,
)
from .ingest import PatientRecord, SchemaError, ingest_csv, write_rejections
from .metrics import consistency_check, count_schema, metric_report
from .rdf import (
    Graph,
    load_ntriples,
    record_to_triples,
    clinical_to_triples,
    save_ntriples,
    serialize_ntriples,
    store_stats,
)
from .rules import RuleSafetyError, RuleSyntaxError, classify_patient, load_rules
from .sparql import SparqlEvalError, SparqlSyntaxError, evaluate, format_table, parse_query
from .synthetic import generate_rows, write_csv

USAGE_EXIT = 1
DATA_EXIT = 2

DATA_ERRORS = (SchemaError, RuleSyntaxError, RuleSafetyError, SparqlSyntaxError,
               SparqlEvalError, BusError, ValueError, OSError, json.JSONDecodeError)


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def parse_duration(text: str) -> float:
    """'5s', '500ms', '2m', or bare seconds."""
    text = text.strip().lower()
    if text.endswith("ms"):
        return float(text[:-2]) / 1000.0
    if text.endswith("s"):
        return float(text[:-1])
    if text.endswith("m"):
        return float(text[:-1]) * 60.0
    return float(text)


def parse_rate(text: str) -> float:
    """'100/s' or bare events-per-second."""
    text = text.strip().lower()
    if text.endswith("/s"):
        text = text[:-2]
    return float(text)


def _load_rule_texts(rules_dir: str | None) -> dict[str, str]:
    if rules_dir is None:
        return {name: bundled.read_rule_file(name) for name in bundled.RULE_FILES}
    texts = {}
    for path in sorted(Path(rules_dir).glob("*.swrlx")):
        texts[path.name] = path.read_text(encoding="utf-8")
    if not texts:
        raise ValueError(f"no .swrlx files in {rules_dir}")
    return texts


def _load_all_rules(rules_dir: str | None):
    rules = []
    for text in _load_rule_texts(rules_dir).values():
        rules.extend(load_rules(text))
    return rules


# --- subcommand implementations --------------------------------------------------


def cmd_gen(args) -> int:
    rows = generate_rows(args.rows, args.seed, clinical=args.clinical,
                         dirty_every=args.dirty_every)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        write_csv(fh, rows, clinical=args.clinical)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    with open(args.infile, encoding="utf-8", newline="") as fh:
        results, rejections = ingest_csv(fh)
    if args.records:
        with open(args.records, "w", encoding="utf-8") as fh:
            for record, clinical in results:
                fh.write(json.dumps(record.to_payload(clinical), sort_keys=True) + "\n")
    if args.rejects:
        with open(args.rejects, "w", encoding="utf-8") as fh:
            write_rejections(rejections, fh)
    print(f"{len(results)} records, {len(rejections)} rejections")
    return 0


def cmd_convert(args) -> int:
    with open(args.infile, encoding="utf-8", newline="") as fh:
        results, rejections = ingest_csv(fh)
    g = Graph()
    for record, clinical in results:
        g.insert_all(record_to_triples(record))
        if clinical:
            g.insert_all(clinical_to_triples(record.patient_id, clinical))
    save_ntriples(g, args.out)
    print(f"wrote {len(g)} triples from {len(results)} records "
          f"({len(rejections)} rejected) to {args.out}")
    return 0


def cmd_classify(args) -> int:
    rules = _load_all_rules(args.rules)
    with open(args.infile, encoding="utf-8", newline="") as fh:
        results, _rejections = ingest_csv(fh)
    rows = []
    for record, clinical in results:
        for c in classify_patient(record, clinical, rules):
            rows.append({"patient": c.patient, "label": c.label,
                         "rule": c.triggering_rule})
    if args.format == "json":
        print(json.dumps(rows, indent=2, sort_keys=True))
    elif args.format == "csv":
        print("patient,label,rule")
        for row in rows:
            print(f"{row['patient']},{row['label']},{row['rule']}")
    else:
        for row in rows:
            print(f"{row['patient']}\t{row['label']}\t{row['rule']}")
    print(f"# {len(rows)} classifications", file=sys.stderr)
    return 0


def cmd_pipeline_run(args) -> int:
    window = WindowSpec(WindowKind.TUMBLING, parse_duration(args.window))
    rule_texts = _load_rule_texts(args.rules)
    rules = []
    deployment = {}
    for name, text in rule_texts.items():
        started = time.perf_counter()
        rules.extend(load_rules(text))
        deployment[name] = time.perf_counter() - started

    with open(args.infile, encoding="utf-8", newline="") as fh:
        results, _rejections = ingest_csv(fh)

    rate = parse_rate(args.rate)
    ingest_times = iter(i / rate for i in range(len(results)))
    bus = StreamBus(broker_ids=(0, 1, 2), clock=lambda: next(ingest_times))
    bus.create_topic(TopicSpec(args.topic, partitions=3, replication_factor=2))
    for record, clinical in results:
        bus.publish(args.topic, record.patient_id.encode("utf-8"),
                    encode_event(record, clinical))

    store_graph = Graph() if args.store else None
    end_to_end_start = time.perf_counter()
    with open(args.out, "w", encoding="utf-8") as alert_fh:
        sinks = [JsonlAlertSink(alert_fh)]
        deadletter_fh = None
        if args.deadletter:
            deadletter_fh = open(args.deadletter, "w", encoding="utf-8")
        if store_graph is not None:
            sinks.append(GraphWritebackSink(store_graph))
        explain_fh = None
        if args.explain:
            from .reasoner import explain_alert

            explain_fh = open(args.explain, "w", encoding="utf-8")
            sinks.append(CallbackSink(
                lambda alert: explain_fh.write(json.dumps(
                    {"patient": alert.patient,
                     "text": explain_alert(alert)}, sort_keys=True) + "\n")))
        try:
            pipeline = Pipeline(bus, args.topic, args.group, window, rules,
                                sinks=sinks, batch_interval=parse_duration(args.batch),
                                store_graph=store_graph,
                                deterministic=args.deterministic,
                                deadletter_stream=deadletter_fh)
            report = pipeline.run()
            report.deployment_times = deployment
        finally:
            if deadletter_fh:
                deadletter_fh.close()
            if explain_fh:
                explain_fh.close()
    end_to_end = time.perf_counter() - end_to_end_start

    if store_graph is not None:
        save_ntriples(store_graph, args.store)

    payload = report.to_dict()
    payload["end_to_end_s"] = end_to_end
    if args.timing and args.store:
        payload["stage_timings"] = _stage_timings(report, args.store, end_to_end)
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    return 0


def _stage_timings(report, store_path: str, end_to_end: float) -> dict:
    g = load_ntriples(store_path)
    query_times = []
    for name in bundled.QUERY_FILES:
        ast = parse_query(bundled.read_query(name))
        started = time.perf_counter()
        evaluate(ast, g)
        query_times.append(time.perf_counter() - started)
    return {
        "cep_mean_window_latency_s": report.mean_window_latency(),
        "ontology_query_mean_s": sum(query_times) / len(query_times),
        "end_to_end_s": end_to_end,
    }


def cmd_pipeline_bench(args) -> int:
    windows = [parse_duration(w) for w in args.windows.split(",")]
    counts = [int(c) for c in args.rule_counts.split(",")]
    rows = bench(windows, counts, parse_rate(args.rate),
                 parse_duration(args.duration), seed=args.seed)
    lines = [BenchRow.csv_header()] + [row.to_csv() for row in rows]
    text = "\n".join(lines) + "\n"
    if args.csv:
        Path(args.csv).write_text(text)
    print(text, end="")
    return 0


def cmd_query_run(args) -> int:
    text = Path(args.query).read_text(encoding="utf-8")
    ast = parse_query(text)
    g = load_ntriples(args.store)
    table = evaluate(ast, g)
    if args.format == "json":
        print(json.dumps([{h: _json_term(v) for h, v in zip(table.header, row)}
                          for row in table.rows], indent=2, sort_keys=True))
    elif args.format == "csv":
        print(",".join(table.header))
        for row in table.rows:
            print(",".join(str(_json_term(v)) for v in row))
    else:
        print(format_table(table))
    return 0


def _json_term(term):
    if term is None:
        return None
    from .sparql import _numeric

    num = _numeric(term)
    if num is not None:
        return int(num) if num == int(num) else num
    return term.value


def cmd_metrics(args) -> int:
    g = load_ntriples(args.store)
    counts = count_schema(g)
    report = metric_report(counts)
    consistency = consistency_check(g)
    payload = {
        "schema_counts": counts.to_dict(),
        "metrics": report.rounded(),
        "consistent": consistency.consistent,
        "violations": [list(v) for v in consistency.violations],
    }
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for key, value in payload["schema_counts"].items():
            print(f"{key:28} {value}")
        for key, value in payload["metrics"].items():
            print(f"{key:28} {value:.3f}")
        print(f"{'consistent':28} {payload['consistent']}")
    return 0


def cmd_reason(args) -> int:
    from . import reasoner

    if args.reason_cmd == "retrieve":
        index = _corpus_index(args.corpus)
        for chunk, score in reasoner.retrieve_top_k(args.query, index, args.k):
            print(f"{score:.4f}  {chunk.doc_id}[{chunk.chunk_index}]  "
                  f"{chunk.text[:100]}")
        return 0
    if args.reason_cmd == "score":
        result = reasoner.score_response(args.prediction, args.reference)
        print(json.dumps({"precision": result.precision, "recall": result.recall,
                          "f1": result.f1}, sort_keys=True))
        return 0
    if args.reason_cmd == "suggest":
        g = load_ntriples(args.onto)
        lexicon = reasoner.load_lexicon(bundled.lexicon_text())
        suggestions = []
        for path in sorted(Path(args.corpus).glob("*.txt")):
            text = path.read_text(encoding="utf-8")
            terms = reasoner.extract_terms(text, lexicon)
            suggestions.extend(reasoner.suggest_updates(terms, g, path.name))
        reasoner.save_suggestions(suggestions, args.pending)
        print(f"{len(suggestions)} pending suggestions -> {args.pending}")
        return 0
    if args.reason_cmd == "apply":
        g = load_ntriples(args.onto)
        approved = reasoner.load_suggestions(args.approved)
        try:
            updated, rule_texts = reasoner.apply_updates(approved, g)
        except reasoner.UpdateRollback as exc:
            print(f"rolled back: {exc}", file=sys.stderr)
            return DATA_EXIT
        out = args.out or args.onto
        save_ntriples(updated, out)
        for name, text in rule_texts.items():
            target = Path(args.rules_out or ".") / name
            target.write_text(text, encoding="utf-8")
        print(f"applied {len(approved)} updates -> {out}")
        return 0
    if args.reason_cmd == "explain":
        from .cep import Alert

        service = None
        url = args.service_url or os.environ.get("TBSTREAM_COMPLETION_URL")
        if url:
            timeout = float(os.environ.get("TBSTREAM_COMPLETION_TIMEOUT", "5"))
            service = reasoner.CompletionService(url, timeout)
        index = _corpus_index(args.corpus) if args.corpus else None
        with open(args.alerts, encoding="utf-8") as fh:
            for line in fh:
                data = json.loads(line)
                alert = Alert(patient=data["patient"], label=data["label"],
                              rule_id=data["rule"], severity=data["severity"],
                              window_id=data["window"], emitted_at=data["ts"])
                context = ()
                if index is not None and len(index):
                    context = [c for c, _ in reasoner.retrieve_top_k(
                        f"{alert.label} precautions", index, min(2, len(index)))]
                print(reasoner.explain_alert(alert, context, service))
                print("---")
        return 0
    raise ValueError(f"unknown reason subcommand {args.reason_cmd!r}")


def _corpus_index(corpus_dir: str):
    from . import reasoner

    documents = {}
    for path in sorted(Path(corpus_dir).glob("*.txt")):
        documents[path.name] = path.read_text(encoding="utf-8")
    if not documents:
        raise ValueError(f"no .txt documents in {corpus_dir}")
    return reasoner.build_index(documents)


def cmd_bus(args) -> int:
    state = Path(args.state)
    if args.bus_cmd == "topics":
        bus = StreamBus.load_state(state)
        for name in bus.topic_names():
            spec = bus.topics[name].spec
            print(f"{name} partitions={spec.partitions} rf={spec.replication_factor}")
        print("brokers:", bus.broker_status())
        return 0
    if args.bus_cmd == "publish":
        if (state / "meta.json").exists():
            bus = StreamBus.load_state(state)
        else:
            bus = StreamBus()
        if args.topic not in bus.topic_names():
            bus.create_topic(TopicSpec(args.topic, args.partitions, args.rf))
        key = args.key.encode("utf-8") if args.key else None
        partition, offset = bus.publish(args.topic, key,
                                        args.payload.encode("utf-8"))
        bus.save_state(state)
        print(f"partition={partition} offset={offset}")
        return 0
    if args.bus_cmd == "consume":
        bus = StreamBus.load_state(state)
        envelopes = bus.consume(args.topic, args.group, args.max)
        for env in envelopes:
            print(f"p{env.partition}#{env.offset} {env.payload.decode('utf-8', 'replace')}")
        if args.commit and envelopes:
            bus.commit_envelopes(args.group, envelopes)
            bus.save_state(state)
        return 0
    if args.bus_cmd in ("fail", "recover"):
        bus = StreamBus.load_state(state)
        if args.bus_cmd == "fail":
            bus.fail_broker(args.broker)
        else:
            bus.recover_broker(args.broker)
        bus.save_state(state)
        print("brokers:", bus.broker_status())
        return 0
    raise ValueError(f"unknown bus subcommand {args.bus_cmd!r}")


def cmd_store(args) -> int:
    if args.store_cmd == "stats":
        g = load_ntriples(args.store)
        for cls, count in sorted(store_stats(g).items(), key=lambda kv: -kv[1]):
            print(f"{count:8d}  {cls}")
        print(f"# {len(g)} triples")
        return 0
    if args.store_cmd == "dump":
        g = load_ntriples(args.store)
        sys.stdout.write(serialize_ntriples(g) or "")
        return 0
    if args.store_cmd == "load":
        g = load_ntriples(args.infile)
        save_ntriples(g, args.out)
        print(f"{len(g)} triples -> {args.out}")
        return 0
    raise ValueError(f"unknown store subcommand {args.store_cmd!r}")


# --- parser wiring ------------------------------------------------------------------


def build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="tbstream",
                             description="Ontology-driven TB stream analytics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic observation CSV")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--clinical", action="store_true",
                   help="add numeric clinical columns")
    p.add_argument("--dirty-every", type=int, default=0)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("ingest", help="parse + preprocess a CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--records")
    p.add_argument("--rejects")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("convert", help="CSV to N-Triples store")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("classify", help="batch rule classification")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--rules", help="rule directory (default: bundled catalogs)")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("pipeline", help="streaming runs and benchmarks")
    pipeline_sub = p.add_subparsers(dest="pipeline_cmd", required=True)
    run = pipeline_sub.add_parser("run")
    run.add_argument("--in", dest="infile", required=True)
    run.add_argument("--topic", default="observations")
    run.add_argument("--group", default="cep")
    run.add_argument("--window", default="5s")
    run.add_argument("--batch", default="1s")
    run.add_argument("--rate", default="100/s",
                     help="simulated ingest rate for --in replay")
    run.add_argument("--rules")
    run.add_argument("--out", required=True, help="alert JSONL path")
    run.add_argument("--store", help="write derived classifications as N-Triples")
    run.add_argument("--report", help="write the run report JSON")
    run.add_argument("--deadletter")
    run.add_argument("--explain", help="write stub explanations JSONL")
    run.add_argument("--timing", action="store_true",
                     help="add per-stage timing summary (needs --store)")
    run.add_argument("--deterministic", action="store_true")
    run.set_defaults(fn=cmd_pipeline_run)
    bench_p = pipeline_sub.add_parser("bench")
    bench_p.add_argument("--windows", default="5s,10s,15s,20s,25s")
    bench_p.add_argument("--rule-counts", default="5,10,15,20,25")
    bench_p.add_argument("--rate", default="100/s")
    bench_p.add_argument("--duration", default="60s")
    bench_p.add_argument("--seed", type=int, default=7)
    bench_p.add_argument("--csv")
    bench_p.set_defaults(fn=cmd_pipeline_bench)

    p = sub.add_parser("query", help="run a query file against a store")
    query_sub = p.add_subparsers(dest="query_cmd", required=True)
    qrun = query_sub.add_parser("run")
    qrun.add_argument("query")
    qrun.add_argument("--store", required=True)
    qrun.add_argument("--format", choices=("table", "csv", "json"), default="table")
    qrun.set_defaults(fn=cmd_query_run)

    p = sub.add_parser("metrics", help="schema counts + richness metrics")
    p.add_argument("--store", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("reason", help="retrieval, scoring, updates, explanations")
    reason_sub = p.add_subparsers(dest="reason_cmd", required=True)
    r = reason_sub.add_parser("retrieve")
    r.add_argument("--corpus", required=True)
    r.add_argument("--query", required=True)
    r.add_argument("-k", type=int, default=2)
    r.set_defaults(fn=cmd_reason)
    r = reason_sub.add_parser("score")
    r.add_argument("--prediction", required=True)
    r.add_argument("--reference", required=True)
    r.set_defaults(fn=cmd_reason)
    r = reason_sub.add_parser("suggest")
    r.add_argument("--corpus", required=True)
    r.add_argument("--onto", required=True)
    r.add_argument("--pending", default="pending.json")
    r.set_defaults(fn=cmd_reason)
    r = reason_sub.add_parser("apply")
    r.add_argument("--approved", required=True)
    r.add_argument("--onto", required=True)
    r.add_argument("--out")
    r.add_argument("--rules-out")
    r.set_defaults(fn=cmd_reason)
    r = reason_sub.add_parser("explain")
    r.add_argument("--alerts", required=True)
    r.add_argument("--corpus")
    r.add_argument("--service-url")
    r.set_defaults(fn=cmd_reason)

    p = sub.add_parser("bus", help="inspect or drive a persisted bus state dir")
    bus_sub = p.add_subparsers(dest="bus_cmd", required=True)
    b = bus_sub.add_parser("publish")
    b.add_argument("--state", required=True)
    b.add_argument("--topic", required=True)
    b.add_argument("--key")
    b.add_argument("--payload", required=True)
    b.add_argument("--partitions", type=int, default=3)
    b.add_argument("--rf", type=int, default=2)
    b.set_defaults(fn=cmd_bus)
    b = bus_sub.add_parser("consume")
    b.add_argument("--state", required=True)
    b.add_argument("--topic", required=True)
    b.add_argument("--group", default="cli")
    b.add_argument("--max", type=int, default=None)
    b.add_argument("--commit", action="store_true")
    b.set_defaults(fn=cmd_bus)
    b = bus_sub.add_parser("topics")
    b.add_argument("--state", required=True)
    b.set_defaults(fn=cmd_bus)
    for name in ("fail", "recover"):
        b = bus_sub.add_parser(name)
        b.add_argument("--state", required=True)
        b.add_argument("--broker", type=int, required=True)
        b.set_defaults(fn=cmd_bus)

    p = sub.add_parser("store", help="N-Triples store utilities")
    store_sub = p.add_subparsers(dest="store_cmd", required=True)
    s = store_sub.add_parser("stats")
    s.add_argument("--store", required=True)
    s.set_defaults(fn=cmd_store)
    s = store_sub.add_parser("dump")
    s.add_argument("--store", required=True)
    s.set_defaults(fn=cmd_store)
    s = store_sub.add_parser("load")
    s.add_argument("--in", dest="infile", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_store)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
