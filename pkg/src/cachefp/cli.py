"""Single command-line entry point for every tool in the package.

Exit codes: 0 success, 1 usage error, 2 runtime error. Runtime errors go to
stderr as one JSON object per failure so scripted callers can dispatch on
the error code without scraping text.

Every subcommand that produces an output directory drops a
``run_manifest.json`` beside its outputs recording the subcommand, flags,
seed, tool version, and host descriptor; rerunning with an identical
manifest reproduces simulator and generator outputs byte for byte. All
randomness derives from the single ``--seed`` flag via documented
(seed, module-tag, index) streams.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
from pathlib import Path

from . import __version__
from .arch import PROFILES, get_profile
from .errors import ToolError
from .rng import RNG_NAME
from .trace import Technique, load_dataset, save_dataset

MANIFEST_NAME = "run_manifest.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def write_manifest(out_dir, subcommand: str, flags: dict, seed=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "flags": {k: v for k, v in sorted(flags.items())},
        "seed": seed,
        "version": __version__,
        "rng": RNG_NAME,
        "host": {
            "platform": platform.platform(),
            "machine": platform.machine(),
            "python": platform.python_version(),
        },
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8", newline="\n")
    return path


def _flags(args, skip=("func", "command")) -> dict:
    return {k: v for k, v in vars(args).items() if k not in skip}


def cmd_capture(args) -> int:
    from .probe import capture_occupancy, capture_sweep_count

    profile = get_profile(args.arch)
    if args.technique == "occupancy":
        gram = capture_occupancy(profile, args.duration_ms, args.period_ms, seed=args.seed)
    else:
        gram = capture_sweep_count(profile, args.duration_ms, window_ms=int(args.period_ms),
                                   seed=args.seed)
    from .trace import Dataset, World

    label = args.label or "capture"
    gram = type(gram)(t_us=gram.t_us, values=gram.values, sample_kind=gram.sample_kind,
                      duration_ms=gram.duration_ms, technique=gram.technique,
                      arch_profile=gram.arch_profile, label=label)
    ds = Dataset(traces=(gram,), world=World.CLOSED, class_count=1, fold_of=(0,))
    save_dataset(ds, args.out)
    write_manifest(args.out, "capture", _flags(args), seed=args.seed)
    print(f"captured {len(gram)} samples into {args.out}")
    return 0


def cmd_victim(args) -> int:
    from .victim import load_profile, profile_library, run_victim

    if args.profile_file:
        profile = load_profile(args.profile_file)
    else:
        library = profile_library(args.library_k, args.seed)
        by_id = {p.id: p for p in library}
        if args.profile not in by_id:
            raise ToolError(f"unknown profile {args.profile!r}; library has {sorted(by_id)}")
        profile = by_id[args.profile]
    arch = get_profile(args.arch)
    ticks = run_victim(profile, arch, seed=args.seed)
    print(f"victim {profile.id} finished after {ticks} ticks")
    return 0


def cmd_simulate(args) -> int:
    from .sim import SimParams, build_benchmark

    params = SimParams() if args.transport == "direct" else SimParams.tor_like()
    ds = build_benchmark(
        k_classes=args.k,
        traces_per_class=args.n,
        technique=Technique(args.technique),
        params=params,
        seed=args.seed,
        total_ms=args.duration_ms,
        jitter_sigma_ms=args.sigma_ms,
        other_traces=args.other,
        phase_jitter_ms=args.phase_jitter_ms,
        independent_profiles=args.independent_profiles,
    )
    save_dataset(ds, args.out)
    write_manifest(args.out, "simulate", _flags(args), seed=args.seed)
    print(f"wrote {len(ds)} traces to {args.out}")
    return 0


def cmd_serve_dns(args) -> int:
    import os

    from .dnsserver import DnsConfig, DnsTimingServer, ZONE_LOG, ZONE_NX

    zones = {}
    for z in args.zone:
        name, _, mode = z.partition("=")
        if mode not in (ZONE_LOG, ZONE_NX):
            raise ToolError(f"zone {z!r}: mode must be '{ZONE_LOG}' or '{ZONE_NX}'")
        zones[name.lower()] = mode
    if not zones:
        raise ToolError("need at least one --zone")
    port = int(os.environ.get("CACHEFP_DNS_PORT", args.port))
    server = DnsTimingServer(DnsConfig(zones=zones, answer_addr=args.answer_addr),
                             host=args.host, port=port, log_path=args.log)
    print(f"dns server on {server.addr[0]}:{server.port} zones={zones}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_serve_ws(args) -> int:
    import os

    from .wsserver import WsTimingServer

    port = int(os.environ.get("CACHEFP_WS_PORT", args.port))
    server = WsTimingServer(host=args.host, port=port, log_path=args.log)
    print(f"ws server on {server.addr[0]}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_gen_payload(args) -> int:
    from .payloadgen import PayloadSpec, generate

    technique = Technique(args.technique.replace("-", "_"))
    spec = PayloadSpec(
        technique=technique,
        arch=get_profile(args.arch),
        domain=args.domain,
        trace_id=args.trace_id,
        seed=args.seed,
        ws_url=args.ws_url,
        n_elements=args.n_elements,
        class_len=args.class_len,
        needle_len=args.needle_len,
        decimation_n=args.decimation_n,
        rounds=args.rounds,
    )
    page = generate(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(page, encoding="utf-8", newline="\n")
    manifest = out.parent / (out.name + ".manifest.json")
    manifest.write_text(json.dumps({
        "subcommand": "gen-payload", "flags": _flags(args), "seed": args.seed,
        "version": __version__, "rng": RNG_NAME,
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
    print(f"wrote {len(page)} bytes to {out}")
    return 0


def cmd_recover_offset(args) -> int:
    from .v8offset import load_push_trace, recover_offset_from_trace

    trace = load_push_trace(args.trace)
    offset = recover_offset_from_trace(trace)
    print(offset)
    return 0


def cmd_classify_baseline(args) -> int:
    from .baseline import emit_report, evaluate

    ds = load_dataset(args.data)
    n_points = args.n_points or ds.n_points or 512
    report = evaluate(ds, n_points=n_points, k=args.k)
    emit_report(report, args.out)
    write_manifest(args.out, "classify-baseline", _flags(args))
    print(f"top1 {report.top1:.4f} +- {report.top1_std:.4f}  "
          f"top5 {report.top5:.4f} +- {report.top5_std:.4f}")
    return 0


def cmd_measure_jitter(args) -> int:
    host, _, port = args.server.partition(":")
    port = int(port)
    if args.mode == "ws":
        from .wsserver import WsTimingServer, measure_ws_jitter

        server = WsTimingServer(host=host, port=port) if args.self_serve else None
        if server:
            server.start()
            port = server.port
        try:
            stddev = measure_ws_jitter(host, port, rate_hz=args.rate, duration_s=args.duration_s,
                                       server=server)
        finally:
            if server:
                server.stop()
        print(f"ws jitter stddev {stddev:.4f} ms over {args.duration_s:g}s at {args.rate:g}/s")
    else:
        from .dnsserver import measure_dns_timer

        summary = measure_dns_timer((host, port), n=int(args.rate * args.duration_s),
                                    rate_hz=args.rate)
        print(f"dns timer median {summary.median_ms:.4f} ms stddev {summary.stddev_ms:.4f} ms "
              f"({summary.count} ok, {summary.censored} censored)")
    return 0


def cmd_report(args) -> int:
    from .baseline import emit_histogram

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for data in args.inputs:
        path = Path(data) / "report.tsv"
        if not path.is_file():
            raise ToolError(f"{path} not found")
        meta, metrics = _parse_report(path)
        rows.append((Path(data).name, meta, metrics))
    lines = ["run\tclassifier\ttop1\ttop1_std\ttop5\ttop5_std"]
    for name, meta, metrics in rows:
        t1 = metrics.get("top1", ("-", "-"))
        t5 = metrics.get("top5", ("-", "-"))
        lines.append(f"{name}\t{meta.get('classifier', '?')}\t{t1[0]}\t{t1[1]}\t{t5[0]}\t{t5[1]}")
    (out / "summary.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    if args.histogram:
        import numpy as np

        values = np.loadtxt(args.histogram, usecols=1)
        emit_histogram(values / 1000.0, out / "histogram.svg")
    write_manifest(args.out, "report", _flags(args))
    print(f"wrote summary for {len(rows)} runs to {out}")
    return 0


def _parse_report(path: Path):
    meta, metrics = {}, {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("# param\t"):
            _, key, val = line.split("\t", 2)
            meta[key] = val
        elif line.startswith("# "):
            parts = line[2:].split("\t")
            if len(parts) == 2:
                meta[parts[0]] = parts[1]
        elif line and not line.startswith("metric\t"):
            parts = line.split("\t")
            if len(parts) == 3:
                metrics[parts[0]] = (parts[1], parts[2])
    return meta, metrics


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cachefp", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("capture", help="run the native prober on this host")
    p.add_argument("--technique", choices=["occupancy", "sweep"], required=True)
    p.add_argument("--arch", default="ci-small", choices=sorted(PROFILES))
    p.add_argument("--duration-ms", type=int, required=True)
    p.add_argument("--period-ms", type=float, default=3.0)
    p.add_argument("--label", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_capture)

    p = sub.add_parser("victim", help="run the synthetic victim process")
    p.add_argument("--profile", default="prof-00")
    p.add_argument("--profile-file", default=None)
    p.add_argument("--library-k", type=int, default=10)
    p.add_argument("--arch", default="ci-small", choices=sorted(PROFILES))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_victim)

    p = sub.add_parser("simulate", help="generate a simulated benchmark dataset")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--technique", default="occupancy",
                   choices=[t.value for t in Technique])
    p.add_argument("--sigma-ms", type=float, default=0.0,
                   help="injected timing jitter stddev")
    p.add_argument("--phase-jitter-ms", type=float, default=0.0,
                   help="per-trace capture-start delay, uniform in [0, X]")
    p.add_argument("--independent-profiles", action="store_true",
                   help="one burst skeleton per class instead of a shared one")
    p.add_argument("--duration-ms", type=int, default=30_000)
    p.add_argument("--transport", choices=["direct", "tor_like"], default="direct")
    p.add_argument("--other", type=int, default=0,
                   help="append this many open-world 'other' traces")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve-dns", help="run the DNS timing server")
    p.add_argument("--zone", action="append", default=[],
                   metavar="NAME=log|nx", help="zone and mode; repeatable")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=5300)
    p.add_argument("--answer-addr", default="192.0.2.1")
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_serve_dns)

    p = sub.add_parser("serve-ws", help="run the WebSocket timing server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8600)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_serve_ws)

    p = sub.add_parser("gen-payload", help="generate a browser payload page")
    p.add_argument("--technique", required=True,
                   choices=["css-pp", "string-sock", "dns-racing"])
    p.add_argument("--arch", default="intel-i5-3470", choices=sorted(PROFILES))
    p.add_argument("--domain", required=True)
    p.add_argument("--trace-id", required=True)
    p.add_argument("--ws-url", default=None)
    p.add_argument("--n-elements", type=int, default=10_000)
    p.add_argument("--class-len", type=int, default=2_000_000)
    p.add_argument("--needle-len", type=int, default=6)
    p.add_argument("--decimation-n", type=int, default=1)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_payload)

    p = sub.add_parser("recover-offset", help="recover a buffer offset from push timings")
    p.add_argument("--trace", required=True, help="TSV of push_index<TAB>duration_us")
    p.set_defaults(func=cmd_recover_offset)

    p = sub.add_parser("classify-baseline", help="k-NN baseline over a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--n-points", type=int, default=None)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify_baseline)

    p = sub.add_parser("measure-jitter", help="measure remote-timer jitter against a server")
    p.add_argument("--mode", choices=["ws", "dns"], required=True)
    p.add_argument("--server", required=True, metavar="HOST:PORT")
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--duration-s", type=float, default=30.0)
    p.add_argument("--self-serve", action="store_true",
                   help="spawn a loopback server for the measurement")
    p.set_defaults(func=cmd_measure_jitter)

    p = sub.add_parser("report", help="aggregate evaluation reports into summary tables")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--histogram", default=None,
                   help="optional trace TSV whose values get a histogram SVG")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.func(args)
    except ToolError as exc:
        print(json.dumps({"error": exc.code, "message": exc.message}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not crashes
        print(json.dumps({"error": "runtime-error", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
