"""Command-line entry point: ``tabser <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
Every output file gets a ``<output>.manifest.json`` next to it recording the
command line, input digests and tool version.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from tabser import __version__
from tabser.backend import BackendConfig, make_backend
from tabser.claims import (
    ORDERS,
    SCOPES,
    STYLES,
    SelectionStrategy,
    load_claims,
    load_concept_map,
    rename_record,
    select_concepts,
    serialize_claims,
    template_budget,
    TOKEN_LIMIT,
)
from tabser.dataset import apply_display_maps, load_csv, load_metadata
from tabser.errors import BackendError, DataError, TabserError
from tabser.evaluate import run_experiment
from tabser.introspect import relative_risk, surrogate_importance
from tabser.llm_serialize import LLM_FORMATS, serialize_dataset_llm
from tabser.prompt import BUILTIN_TEMPLATES, builtin_template, classify, load_template, render
from tabser.serialize import FORMATS, SerializedExample, serialize_dataset

log = logging.getLogger("tabser")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- output helpers


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(obj):
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _dump_jsonl(rows):
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)


def write_manifest(out_path, argv, inputs, seeds, started):
    digests = {str(p): _sha256_file(p) for p in inputs if p and Path(p).is_file()}
    config = {"argv": list(argv), "inputs": digests, "version": __version__}
    manifest = {
        "command_line": " ".join(["tabser", *argv]),
        "config_digest": hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest(),
        "tool_version": __version__,
        "seeds": list(seeds),
        "inputs": digests,
        "started_at": started.isoformat(),
        "finished_at": dt.datetime.now(dt.timezone.utc).isoformat(),
    }
    write_atomic(f"{out_path}.manifest.json", _dump_json(manifest))


# ---------------------------------------------------------------- shared loaders


def _load_dataset(args):
    with open(args.meta, encoding="utf-8") as fh:
        meta_obj = json.load(fh)
    columns, class_names = load_metadata(meta_obj)
    label_column = args.label_column
    if label_column is None:
        label_column = meta_obj.get("label_column", "label") if isinstance(meta_obj, dict) else "label"
    ds = load_csv(args.dataset, columns, label_column, class_names=class_names)
    return apply_display_maps(ds)


def _backend(args):
    spec = args.backend
    if spec == "http":
        config = BackendConfig(
            kind="http",
            endpoint=args.endpoint,
            auth_token_env=args.auth_token_env,
            max_concurrency=args.max_concurrency,
            timeout=args.timeout,
            retries=args.retries,
            cache_path=args.cache,
            model=args.model,
        )
    elif spec == "mock":
        config = BackendConfig(kind="mock", mock={"kind": "echo"})
    elif spec.startswith("mock:"):
        with open(spec[len("mock:") :], encoding="utf-8") as fh:
            config = BackendConfig(kind="mock", mock=json.load(fh))
    else:
        raise UsageError(f"unknown backend {spec!r} (use mock, mock:SPEC.json or http)")
    return make_backend(config)


def _template(name_or_path):
    if name_or_path in BUILTIN_TEMPLATES and not Path(name_or_path).exists():
        return builtin_template(name_or_path)
    return load_template(name_or_path)


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------- commands


def cmd_serialize(args):
    ds = _load_dataset(args)
    if args.format in LLM_FORMATS:
        backend = _backend(args)
        examples = serialize_dataset_llm(
            ds, args.format, backend, subject=args.subject, max_workers=args.threads, max_tokens=args.max_tokens
        )
    else:
        examples = serialize_dataset(ds, args.format, seed=args.seed, max_features=args.max_features)
    write_atomic(args.out, _dump_jsonl(e.to_dict() for e in examples))
    return [args.dataset, args.meta], [args.seed]


def cmd_classify(args):
    tpl = _template(args.template)
    backend = _backend(args)
    rows = []
    with open(args.serializations, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            ex = SerializedExample(rec["text"], rec.get("serializer_id", ""), rec["row_index"], rec.get("seed"))
            scores = classify(render(tpl, ex), backend)
            rows.append({"row_index": ex.row_index, "probs": list(scores.probs), "predicted": scores.predicted})
    write_atomic(args.out, _dump_jsonl(rows))
    return [args.template, args.serializations], []


def cmd_eval(args):
    ds = _load_dataset(args)
    tpl = _template(args.template)
    if len(tpl.answer_choices) != len(ds.class_names):
        raise DataError(f"template has {len(tpl.answer_choices)} choices for {len(ds.class_names)} classes")
    backend = _backend(args)
    seeds = list(range(args.seed, args.seed + args.seeds))
    reports = run_experiment(ds, tpl, args.format, backend, args.shots, seeds, threads=args.threads)
    config = {
        "dataset": str(args.dataset),
        "meta": str(args.meta),
        "template": str(args.template),
        "format": args.format,
        "backend": args.backend,
        "shots": args.shots,
        "seeds": seeds,
        "class_names": list(ds.class_names),
    }
    write_atomic(args.out, _dump_json({"config": config, "reports": [r.to_dict() for r in reports]}))
    shot_dir = Path(f"{args.out}.shots")
    for r in reports:
        for s in r.shots:
            write_atomic(shot_dir / f"seed{s.seed}_k{s.k}.json", _dump_json(s.to_dict()))
    return [args.dataset, args.meta, args.template], seeds


def cmd_introspect(args):
    ds = _load_dataset(args)
    probs = [None] * ds.n
    with open(args.preds, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                if len(rec["probs"]) != 2:
                    raise DataError("introspection needs binary predictions")
                probs[rec["row_index"]] = rec["probs"][1]
    if any(p is None for p in probs):
        raise DataError("predictions do not cover every dataset row")
    result = surrogate_importance(ds, probs, folds=args.folds, target=args.target, seed=args.seed)
    write_atomic(args.out, _dump_json(result.to_dict()))
    return [args.dataset, args.meta, args.preds], [args.seed]


def _read_labels(path):
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            try:
                labels[row["patient_id"]] = int(row["label"])
            except (KeyError, ValueError) as e:
                raise DataError(f"{path}: bad label row {row} ({e})") from None
    return labels


def cmd_rr(args):
    records = load_claims(args.claims)
    labels = _read_labels(args.labels)
    features = []
    for rec in records:
        if rec.patient_id not in labels:
            raise DataError(f"no label for patient {rec.patient_id!r}")
        feats = {f"sex_{rec.sex}", f"race_{rec.race}"}
        for v in rec.visits:
            feats.update(c.name for c in v.conditions)
        features.append((feats, labels[rec.patient_id]))
    names = sorted(set().union(*(f for f, _ in features))) if features else []
    out = []
    for name in names:
        a = b = c = d = 0
        for feats, y in features:
            if name in feats:
                a, b = a + (y == 1), b + (y != 1)
            else:
                c, d = c + (y == 1), d + (y != 1)
        if c + d == 0:
            continue
        rr = relative_risk(a, b, c, d)
        out.append({"feature": name, **rr.to_dict(), "a": a, "b": b, "c": c, "d": d})
    write_atomic(args.out, _dump_json(out))
    return [args.claims, args.labels], []


def cmd_claims(args):
    records = load_claims(args.claims)
    mapping = load_concept_map(args.concept_map) if args.concept_map else {}
    strat = SelectionStrategy(args.order, args.scope)
    if args.budget is not None:
        budget = args.budget
    elif args.template:
        budget = template_budget(_template(args.template).body, args.token_limit)
    else:
        budget = args.token_limit
    rows = []
    for rec in records:
        if mapping:
            rec = rename_record(rec, mapping)
        selected = select_concepts(rec, strat, budget, style=args.style)
        ex = serialize_claims(rec, selected, args.style)
        rows.append(
            {"patient_id": rec.patient_id, "serializer_id": ex.serializer_id, "n_concepts": len(selected), "text": ex.text}
        )
    write_atomic(args.out, _dump_jsonl(rows))
    inputs = [args.claims] + ([args.concept_map] if args.concept_map else [])
    return inputs, []


# ---------------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for model calls")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", required=True, help="CSV file with a header row")
    data.add_argument("--meta", required=True, help="column metadata JSON")
    data.add_argument("--label-column", default=None, help="label column (default: metadata or 'label')")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--backend", default="mock", help="mock, mock:SPEC.json or http")
    model.add_argument("--endpoint", help="completions URL for --backend http")
    model.add_argument("--model", help="model name sent with http requests")
    model.add_argument("--auth-token-env", help="environment variable holding a bearer token")
    model.add_argument("--cache", help="JSONL response cache file")
    model.add_argument("--max-concurrency", type=int, default=4)
    model.add_argument("--timeout", type=float, default=30.0)
    model.add_argument("--retries", type=int, default=3)

    parser = _Parser(prog="tabser", description="Serialize table rows and score them with a language model.")
    parser.add_argument("--version", action="version", version=f"tabser {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("serialize", parents=[common, data, model], help="serialize table rows to text")
    p.add_argument("--format", required=True, choices=list(FORMATS) + list(LLM_FORMATS))
    p.add_argument("--max-features", type=int, default=10)
    p.add_argument("--subject", default="person", help="guide subject for text-full")
    p.add_argument("--max-tokens", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("classify", parents=[common, model], help="score answer choices for serializations")
    p.add_argument("--template", required=True, help="template file or built-in name")
    p.add_argument("--serializations", required=True, help="JSONL from 'serialize'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", parents=[common, data, model], help="run the few-shot evaluation protocol")
    p.add_argument("--template", required=True)
    p.add_argument("--format", default="text", choices=list(FORMATS))
    p.add_argument("--shots", type=_int_list, default=[0])
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("introspect", parents=[common, data], help="surrogate feature importance")
    p.add_argument("--preds", required=True, help="JSONL from 'classify'")
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--target", choices=["hard", "soft"], default="hard")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_introspect)

    p = sub.add_parser("rr", parents=[common], help="relative risk of claims concepts")
    p.add_argument("--claims", required=True)
    p.add_argument("--labels", required=True, help="CSV with patient_id,label")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rr)

    p = sub.add_parser("claims", parents=[common], help="serialize claims records under a token budget")
    p.add_argument("--claims", required=True)
    p.add_argument("--style", choices=STYLES, default="list")
    p.add_argument("--order", choices=ORDERS, default="most_frequent")
    p.add_argument("--scope", choices=SCOPES, default="conditions")
    p.add_argument("--budget", type=int, help="token budget (default: limit minus template cost)")
    p.add_argument("--token-limit", type=int, default=TOKEN_LIMIT)
    p.add_argument("--template", help="task template whose cost is subtracted from the limit")
    p.add_argument("--concept-map", help="TSV of id and alternative name")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_claims)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    started = dt.datetime.now(dt.timezone.utc)
    try:
        inputs, seeds = args.func(args)
        write_manifest(args.out, argv, inputs, seeds, started)
    except UsageError as e:
        print(f"tabser: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as e:
        print(f"tabser: backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except (TabserError, OSError, ValueError, KeyError) as e:
        print(f"tabser: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
