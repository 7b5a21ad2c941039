"""Command-line entry point.

Subcommands cover the whole workflow: synthesize a dataset, train and
evaluate the classifier, classify a recorded stream, play a full session
offline, or serve the live node graph with the TCP bus and the websocket
console bridge.  Everything the CLI does goes through the library, so the
two paths cannot disagree.

Configuration precedence: flags > config file (RHYME_MIMIC_CONFIG) > defaults.
Exit codes: 0 success, 1 domain failure, 2 usage or IO error.
"""
from __future__ import annotations

import argparse
import json
import os
import signal
import sys
from importlib import resources
from pathlib import Path

from . import datasets, game, gmm, streams
from .gmm import GmmError
from .peripherals import LatencyModel, MalformedStream, ReplaySource, classify_document
from .runtime import Runtime, RuntimeConfig
from .skeleton import DEFAULT_CONFIDENCE_THRESHOLD

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2

_DOMAIN_ERRORS = (GmmError, game.GameError, datasets.DatasetError, MalformedStream, ValueError)


def _load_config_file() -> dict:
    path = os.environ.get("RHYME_MIMIC_CONFIG")
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"cannot read config file {path}: {exc}")
    if not isinstance(doc, dict):
        raise SystemExit(f"config file {path} must hold a JSON object")
    return doc


def _resolve(args: argparse.Namespace, config: dict, key: str, default=None):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


def bundled_script_path() -> Path:
    return Path(str(resources.files("rhyme_mimic").joinpath("assets/rhyme_script.json")))


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        print(f"error: {what} not found: {p}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    return p


def _latency_from_config(config: dict) -> LatencyModel:
    """Per-kind peripheral durations from the config file's "latency" object."""
    entry = config.get("latency")
    if entry is None:
        return LatencyModel()
    if not isinstance(entry, dict):
        print("error: config 'latency' must be an object", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    entry = dict(entry)
    known = entry.pop("known_resources", None)
    try:
        model = LatencyModel(**{k: int(v) for k, v in entry.items()})
    except TypeError as exc:
        print(f"error: bad latency config: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    if known is not None:
        model.known_resources = set(known)
    return model


def _training_config(args, config, seed) -> gmm.TrainingConfig:
    kind = {"diag": "diagonal", "diagonal": "diagonal", "full": "full"}[
        _resolve(args, config, "covariance", "diag")
    ]
    return gmm.TrainingConfig(
        components_per_class=int(_resolve(args, config, "components", 1)),
        covariance_kind=kind,
        rng_seed=seed,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args, config) -> int:
    dataset_path = _require_file(_resolve(args, config, "dataset"), "dataset")
    seed = int(_resolve(args, config, "seed", 0))
    data = datasets.load_dataset(dataset_path, threshold=float(_resolve(args, config, "threshold", DEFAULT_CONFIDENCE_THRESHOLD)))
    classifier, report = gmm.train_with_report(data, _training_config(args, config, seed))
    model_path = _resolve(args, config, "model", "model.json")
    gmm.save_model(classifier, model_path)
    out = {
        "schema_version": SCHEMA_VERSION,
        "model": str(model_path),
        "seed": seed,
        "classes": report,
        "labels": classifier.labels,
        "n_samples": len(data),
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_eval(args, config) -> int:
    model_path = _require_file(_resolve(args, config, "model"), "model")
    dataset_path = _require_file(_resolve(args, config, "dataset"), "dataset")
    classifier = gmm.load_model(model_path)
    data = datasets.load_dataset(dataset_path)
    split_fraction = _resolve(args, config, "split")
    seed = int(_resolve(args, config, "seed", 0))
    out = {"schema_version": SCHEMA_VERSION, "model": str(model_path), "n_samples": len(data)}
    if split_fraction is not None:
        train_part, test_part = gmm.split(data, float(split_fraction), seed)
        train_report = gmm.evaluate(classifier, train_part)
        test_report = gmm.evaluate(classifier, test_part)
        out["train"] = train_report.to_dict()
        out["test"] = test_report.to_dict()
        out["accuracy"] = test_report.accuracy
        print(
            f"train accuracy {train_report.accuracy:.2%} | test accuracy {test_report.accuracy:.2%}",
            file=sys.stderr,
        )
    else:
        report = gmm.evaluate(classifier, data)
        out["report"] = report.to_dict()
        out["accuracy"] = report.accuracy
        print(f"accuracy {report.accuracy:.2%}", file=sys.stderr)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_gen_synthetic(args, config) -> int:
    seed = int(_resolve(args, config, "seed", 0))
    data = datasets.generate_synthetic(
        n_classes=int(_resolve(args, config, "classes", 8)),
        per_class=int(_resolve(args, config, "per_class", 30)),
        spread=float(_resolve(args, config, "spread", datasets.DEFAULT_SPREAD)),
        seed=seed,
    )
    out_path = _resolve(args, config, "out", "dataset.ndjson")
    datasets.save_dataset(data, out_path)
    print(json.dumps({"schema_version": SCHEMA_VERSION, "out": str(out_path), "records": len(data), "seed": seed}))
    return EXIT_OK


def cmd_gen_stream(args, config) -> int:
    script = game.load_script(_require_file(_resolve(args, config, "script", bundled_script_path()), "script"))
    pattern = _resolve(args, config, "outcomes", "all")
    if pattern == "all":
        outcomes = [True] * len(script.lines)
    elif pattern == "none":
        outcomes = [False] * len(script.lines)
    else:
        if len(pattern) != len(script.lines) or set(pattern) - set("TF"):
            print(f"error: outcomes must be 'all', 'none' or {len(script.lines)} chars of T/F", file=sys.stderr)
            return EXIT_USAGE
        outcomes = [c == "T" for c in pattern]
    plan = streams.make_session_stream(script, outcomes, seed=int(_resolve(args, config, "seed", 0)))
    out_path = _resolve(args, config, "out", "stream.ndjson")
    plan.write(out_path)
    print(
        json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "out": str(out_path),
                "frames": len(plan.records),
                "ground_truth": {str(k): v for k, v in plan.ground_truth.items()},
            }
        )
    )
    return EXIT_OK


def cmd_classify(args, config) -> int:
    classifier = gmm.load_model(_require_file(_resolve(args, config, "model"), "model"))
    stream_path = _require_file(_resolve(args, config, "stream"), "stream")
    threshold = float(_resolve(args, config, "threshold", DEFAULT_CONFIDENCE_THRESHOLD))
    source = ReplaySource.from_file(stream_path)
    skips: dict[str, int] = {}
    for ts, doc in source.records:
        result = classify_document(classifier, doc, threshold)
        if isinstance(result, str):
            skips[result] = skips.get(result, 0) + 1
            continue
        print(json.dumps({"timestamp_ms": ts, "label": result.label, "score": result.score}))
    print(
        json.dumps({"schema_version": SCHEMA_VERSION, "frames": len(source.records), "skips": skips}),
        file=sys.stderr,
    )
    return EXIT_OK


def _build_runtime(args, config, stop_when_finished: bool) -> Runtime:
    script = game.load_script(_require_file(_resolve(args, config, "script", bundled_script_path()), "script"))
    model_path = _require_file(_resolve(args, config, "model"), "model")
    classifier = gmm.load_model(model_path)
    stream_path = _resolve(args, config, "stream")
    stream = None
    if stream_path is not None:
        stream = ReplaySource.from_file(_require_file(stream_path, "stream"), rate=float(_resolve(args, config, "rate", 1.0)))
    bus_addr = _resolve(args, config, "bus_addr")
    ws_addr = _resolve(args, config, "ws_addr")
    runtime_config = RuntimeConfig(
        script=script,
        classifier=classifier,
        clock_mode=_resolve(args, config, "clock", "virtual" if stop_when_finished else "real"),
        threshold=float(_resolve(args, config, "threshold", DEFAULT_CONFIDENCE_THRESHOLD)),
        latency=_latency_from_config(config),
        stream=stream,
        bus_address=_parse_address(bus_addr) if bus_addr else None,
        ws_address=_parse_address(ws_addr) if ws_addr else None,
        stop_when_finished=stop_when_finished,
    )
    return Runtime(runtime_config)


def _write_session_outputs(runtime: Runtime, args, config) -> dict:
    log_path = _resolve(args, config, "log", "session_log.ndjson")
    runtime.session.log.write_ndjson(log_path)
    out = {"schema_version": SCHEMA_VERSION, "log": str(log_path)}
    state = runtime.session.state
    if state.phase is game.Phase.FINISHED:
        summary = runtime.session.summary()
        out["summary"] = summary.to_dict()
        summary_path = _resolve(args, config, "summary")
        if summary_path:
            Path(summary_path).write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")
    else:
        out["summary"] = None
        out["final_phase"] = state.phase.value
    return out


def cmd_play(args, config) -> int:
    runtime = _build_runtime(args, config, stop_when_finished=True)
    # A Ctrl-C mid-session aborts the game; the partial log is still flushed.
    previous = signal.getsignal(signal.SIGINT)

    def _on_sigint(signum, frame):
        runtime.abort()

    signal.signal(signal.SIGINT, _on_sigint)
    try:
        runtime.run()
    finally:
        signal.signal(signal.SIGINT, previous)
        runtime.close()
    out = _write_session_outputs(runtime, args, config)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_serve(args, config) -> int:
    if _resolve(args, config, "bus_addr") is None:
        setattr(args, "bus_addr", "127.0.0.1:7001")
    if _resolve(args, config, "ws_addr") is None:
        setattr(args, "ws_addr", "127.0.0.1:7002")
    runtime = _build_runtime(args, config, stop_when_finished=False)
    print(
        json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "bus": list(runtime.tcp_server.address) if runtime.tcp_server else None,
                "ws": list(runtime.ws_server.address) if runtime.ws_server else None,
                "script": runtime.config.script.title,
            }
        ),
        flush=True,
    )
    previous = signal.getsignal(signal.SIGINT)

    def _on_sigint(signum, frame):
        runtime.abort()
        runtime.stop()

    signal.signal(signal.SIGINT, _on_sigint)
    try:
        runtime.run()
    finally:
        signal.signal(signal.SIGINT, previous)
        runtime.close()
    out = _write_session_outputs(runtime, args, config)
    print(json.dumps(out, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rhyme-mimic", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threshold", type=float, default=None, help="keypoint confidence gate")

    p = sub.add_parser("train", help="fit the pose classifier on a dataset")
    common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--model", default=None, help="output model path")
    p.add_argument("--components", type=int, default=None)
    p.add_argument("--covariance", choices=["diag", "full"], default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a dataset")
    common(p)
    p.add_argument("--model", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--split", type=float, default=None, help="train fraction; reports both splits")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic pose dataset")
    common(p)
    p.add_argument("--out", default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--per-class", dest="per_class", type=int, default=None)
    p.add_argument("--spread", type=float, default=None)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("gen-stream", help="generate a session-aligned keypoint stream")
    common(p)
    p.add_argument("--script", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--outcomes", default=None, help="'all', 'none', or a T/F pattern per line")
    p.set_defaults(func=cmd_gen_stream)

    p = sub.add_parser("classify", help="classify a recorded keypoint stream")
    common(p)
    p.add_argument("--model", default=None)
    p.add_argument("--stream", default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("play", help="run a full offline session from a recorded stream")
    common(p)
    p.add_argument("--model", default=None)
    p.add_argument("--script", default=None)
    p.add_argument("--stream", default=None)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--clock", choices=["real", "virtual"], default=None)
    p.add_argument("--log", default=None)
    p.add_argument("--summary", default=None)
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("serve", help="host the live node graph, TCP bus, and console bridge")
    common(p)
    p.add_argument("--model", default=None)
    p.add_argument("--script", default=None)
    p.add_argument("--stream", default=None)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--clock", choices=["real", "virtual"], default=None)
    p.add_argument("--bus-addr", dest="bus_addr", default=None)
    p.add_argument("--ws-addr", dest="ws_addr", default=None)
    p.add_argument("--log", default=None)
    p.add_argument("--summary", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config_file()
        return args.func(args, config)
    except SystemExit as exc:  # argparse errors and _require_file
        code = exc.code
        if code is None:
            return EXIT_OK
        if isinstance(code, int):
            return code
        print(code, file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
