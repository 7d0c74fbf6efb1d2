"""Command line front end.

One binary, three subcommands::

    tenstream launch "synthetic_src dim=1:1:4:1 type=uint8 frames=10 ! counting_sink"
    tenstream inspect tensor_aggregator
    tenstream graph "videotestsrc ! counting_sink" out.dot

stdout carries stats and listings, stderr carries diagnostics, so the two
can be split in shell scripts.  Exit codes: 0 for a clean run (EOS, frame
limit, or interrupt), 1 for parse or validation errors, 2 for runtime
failures.  TENSTREAM_LOG sets the default log level; --verbose forces
debug logging.
"""

from __future__ import annotations

import argparse
import logging
import sys
import threading
import time
from dataclasses import dataclass
from os import environ

from .elements import base
from .elements.filters import list_frameworks
from .errors import (ParseError, PipelineFailure, StateChangeFailed,
                     StreamError, UnknownKind)
from .graph import PipelineGraph, ValidationResult
from .parse import parse
from .runtime import Pipeline
from .tensors import spec_to_string

log = logging.getLogger("tenstream")

_LOG_ENV = "TENSTREAM_LOG"


@dataclass(frozen=True)
class LaunchOptions:
    description: str
    frames: int | None = None
    stats_interval: float | None = None
    verbose: bool = False
    dump_graph: str | None = None


def _setup_logging(verbose: bool):
    level = logging.DEBUG if verbose \
        else getattr(logging, environ.get(_LOG_ENV, "warning").upper(),
                     logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def dot_text(graph: PipelineGraph, plan: ValidationResult | None = None) -> str:
    """Render a graph as DOT; edges are labeled with negotiated specs."""
    lines = ["digraph pipeline {", "  rankdir=LR;", "  node [shape=box];"]
    for name, desc in graph.elements.items():
        lines.append(f'  "{name}" [label="{name}\\n{desc.kind.KIND}"];')
    for link in graph.links:
        spec = plan.spec_of(*link.src) if plan is not None else None
        if spec is None:
            spec = link.filter
        label = spec_to_string(spec).replace('"', '\\"') if spec else ""
        attr = f' [label="{label}"]' if label else ""
        lines.append(f'  "{link.src[0]}" -> "{link.sink[0]}"{attr};')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _parse_and_validate(description: str):
    """Returns (graph, plan) or None after printing diagnostics to stderr."""
    try:
        graph = parse(description).graph
    except ParseError as e:
        print(str(e), file=sys.stderr)
        return None
    plan = graph.validate()
    if not plan.ok:
        for diag in plan.diagnostics:
            print(str(diag), file=sys.stderr)
        return None
    return graph, plan


def _terminal_sinks(graph: PipelineGraph) -> list[str]:
    return [name for name, desc in graph.elements.items()
            if not desc.source_pad_names()]


def _print_summary(pipeline: Pipeline, elapsed: float):
    print("element frames_in frames_out drops busy_ms fps")
    for name, view in pipeline.stats().items():
        frames = view.frames_out or view.frames_in
        fps = frames / elapsed if elapsed > 0 else 0.0
        print(f"{view.line(name)} {fps:.1f}")
    sys.stdout.flush()


def cmd_launch(options: LaunchOptions) -> int:
    if options.frames is not None and options.frames < 1:
        print("--frames must be >= 1", file=sys.stderr)
        return 1
    if options.stats_interval is not None and options.stats_interval <= 0:
        print("--stats must be > 0", file=sys.stderr)
        return 1
    result = _parse_and_validate(options.description)
    if result is None:
        return 1
    graph, plan = result
    if options.dump_graph:
        _write_text(options.dump_graph, dot_text(graph, plan))
    pipeline = Pipeline(graph, plan)
    sinks = _terminal_sinks(graph)

    done = threading.Event()
    if options.frames is not None:
        limit = options.frames

        def watch_frames():
            while not done.wait(0.005):
                total = sum(pipeline.element(n).stats.frames_in
                            for n in sinks)
                if total >= limit:
                    log.debug("frame limit %d reached, stopping", limit)
                    pipeline.stop()
                    return

        threading.Thread(target=watch_frames, name="cli:frames",
                         daemon=True).start()
    if options.stats_interval is not None:
        interval = options.stats_interval

        def tick_stats():
            while not done.wait(interval):
                for line in pipeline.stats_lines():
                    print(line)
                print("", flush=True)

        threading.Thread(target=tick_stats, name="cli:stats",
                         daemon=True).start()

    code = 0
    started = time.monotonic()
    try:
        outcome = pipeline.run()
        log.debug("pipeline finished: %s", outcome)
    except KeyboardInterrupt:
        log.debug("interrupted, stopping pipeline")
    except (PipelineFailure, StateChangeFailed) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        code = 2
    finally:
        done.set()
        elapsed = time.monotonic() - started
        try:
            pipeline.stop()
        except StreamError as e:  # teardown must not mask the run outcome
            print(f"stop failed: {e}", file=sys.stderr)
            code = code or 2
    _print_summary(pipeline, elapsed)
    return code


def cmd_inspect(kind: str | None = None) -> int:
    if kind is None:
        print("elements:")
        for name in base.list_kinds():
            print(f"  {name}")
        print("frameworks:")
        for fw in list_frameworks():
            print(f"  {fw}")
        return 0
    try:
        cls = base.get_kind(kind)
    except UnknownKind as e:
        print(str(e), file=sys.stderr)
        return 1
    headline = (cls.__doc__ or "").strip().splitlines()
    print(f"{cls.KIND}: {headline[0] if headline else ''}".rstrip(": "))
    if cls.ALIASES:
        print(f"aliases: {', '.join(cls.ALIASES)}")
    print("pads:")
    for tpl in cls.PADS:
        spec = spec_to_string(tpl.spec) if tpl.spec is not None else "any"
        print(f"  {tpl.name}  {tpl.direction}  {tpl.presence}  {spec}")
    print("properties:")
    for pname, prop in base.property_schema(cls).items():
        if pname == "name":
            continue
        bits = [prop.kind]
        if prop.choices:
            bits.append("one of " + "|".join(prop.choices))
        if prop.required:
            bits.append("required")
        if prop.default is not None:
            bits.append(f"default={prop.default}")
        tail = f"  {prop.doc}" if prop.doc else ""
        print(f"  {pname} ({', '.join(bits)}){tail}")
    return 0


def cmd_graph(description: str, out: str = "-") -> int:
    result = _parse_and_validate(description)
    if result is None:
        return 1
    graph, plan = result
    try:
        _write_text(out, dot_text(graph, plan))
    except OSError as e:
        print(f"cannot write {out}: {e}", file=sys.stderr)
        return 2
    return 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tenstream",
        description="Build and run tensor stream pipelines.")
    sub = ap.add_subparsers(dest="command", required=True)

    lp = sub.add_parser("launch", help="parse, validate and run a pipeline")
    lp.add_argument("description", help="pipeline description text")
    lp.add_argument("--frames", type=int, default=None, metavar="N",
                    help="stop after the sinks received N frames")
    lp.add_argument("--stats", type=float, default=None, metavar="S",
                    dest="stats_interval",
                    help="print element stats every S seconds")
    lp.add_argument("--verbose", action="store_true")
    lp.add_argument("--dump-graph", default=None, metavar="PATH",
                    help="also write the topology as DOT")

    ip = sub.add_parser("inspect", help="list element kinds or show one")
    ip.add_argument("kind", nargs="?", default=None)
    ip.add_argument("--verbose", action="store_true")

    gp = sub.add_parser("graph", help="write a pipeline topology as DOT")
    gp.add_argument("description")
    gp.add_argument("out", nargs="?", default="-",
                    help="output path, '-' for stdout")
    gp.add_argument("--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as e:  # argparse exits; fold into our contract
        return 0 if e.code in (0, None) else 1
    _setup_logging(getattr(args, "verbose", False))
    if args.command == "launch":
        return cmd_launch(LaunchOptions(
            description=args.description, frames=args.frames,
            stats_interval=args.stats_interval, verbose=args.verbose,
            dump_graph=args.dump_graph))
    if args.command == "inspect":
        return cmd_inspect(args.kind)
    return cmd_graph(args.description, args.out)


if __name__ == "__main__":
    sys.exit(main())
