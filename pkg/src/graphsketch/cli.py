"""Command-line front end.

``graphsketch run STREAM`` reads an update stream in one pass, maintains the
sketches, decodes a sparsifier and writes it as a weighted edge list.
``graphsketch selftest`` runs a quick battery of oracle, linearity and PRG
checks.

Stream format::

    n 16
    + 0 1
    - 0 1      # comments allowed

Exit codes: 0 ok, 2 stream error, 3 decode failure, 4 verification failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .decode import VARIANTS, Decoder, GlobalParams, build_stack
from .exact_oracles import exact_effective_resistance, is_spectral_sparsifier
from .graph_core import EdgeKey, Graph, StreamViolation, WeightedGraph
from .prg import PrgChain, byte_chi_square_pvalue, monobit_pvalue, parse_seed
from .resistance import NotConverged
from .sketches import CapacityExceeded, DecodeFailure

log = logging.getLogger(__name__)

EXIT_OK, EXIT_STREAM, EXIT_DECODE, EXIT_VERIFY = 0, 2, 3, 4
BATCH = 4096


class StreamError(ValueError):
    """Malformed or invalid stream; the message carries the line number."""


@dataclass
class RunConfig:
    n: int | None = None
    eps: float = 0.5
    gamma_base: float | None = None
    variant: str = "ballcarve"
    seed: str = "0"
    q_jl: int | None = None
    d_threshold: float | None = None
    lambda_threshold: int | None = None
    beta: float | None = None
    verify: bool = False
    out: str | None = None
    checkpoint: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {', '.join(VARIANTS)}")
        if self.n is not None and self.n < 1:
            raise ValueError("n must be positive")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        for name in ("gamma_base", "q_jl", "d_threshold", "lambda_threshold", "beta"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive")

    def params(self, n: int) -> GlobalParams:
        return GlobalParams(n=n, eps=self.eps, gamma_base=self.gamma_base, variant=self.variant,
                            d_threshold=self.d_threshold, lambda_threshold=self.lambda_threshold,
                            beta=self.beta, q_jl=self.q_jl)


@dataclass
class RunReport:
    n: int
    variant: str
    gamma: float
    levels: int
    tree_nodes: int
    updates: int
    edges_in: int
    edges_out: int
    sketch_bytes: int
    ingest_seconds: float
    decode_seconds: float
    verified: bool | None = None
    stats: dict = field(default_factory=dict)


def parse_stream(lines: Iterable[str], n_hint: int | None = None):
    """Yield ``(line_no, delta, EdgeKey)`` after the ``n <count>`` header.

    The first yielded item is ``(line_no, 0, n)`` for the header.
    """
    seen_header = False
    n = None
    for no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if not seen_header:
            if len(parts) != 2 or parts[0] != "n":
                raise StreamError(f"line {no}: expected header 'n <count>'")
            try:
                n = int(parts[1])
            except ValueError:
                raise StreamError(f"line {no}: bad vertex count {parts[1]!r}") from None
            if n < 1:
                raise StreamError(f"line {no}: vertex count must be positive")
            if n_hint is not None and n_hint != n:
                raise StreamError(f"line {no}: header says n={n} but --n={n_hint}")
            seen_header = True
            yield no, 0, n
            continue
        if len(parts) != 3 or parts[0] not in "+-" or len(parts[0]) != 1:
            raise StreamError(f"line {no}: expected '+ u v' or '- u v'")
        try:
            u, v = int(parts[1]), int(parts[2])
        except ValueError:
            raise StreamError(f"line {no}: vertex ids must be integers") from None
        if not (0 <= u < n and 0 <= v < n) or u == v:
            raise StreamError(f"line {no}: invalid edge ({u}, {v}) for n={n}")
        yield no, 1 if parts[0] == "+" else -1, EdgeKey(u, v)
    if not seen_header:
        raise StreamError("empty stream: missing 'n <count>' header")


def format_edges(h: WeightedGraph) -> str:
    return "".join(f"{e.u} {e.v} {w:.17g}\n" for e, w in sorted(h.edges.items(), key=lambda kv: kv[0].linear_index))


def run_stream(config: RunConfig, lines: Iterable[str]) -> tuple[WeightedGraph, RunReport]:
    """One pass over the stream, then decode; raises StreamError / DecodeFailure."""
    seed = parse_seed(config.seed)
    items = iter(parse_stream(lines, config.n))
    _, _, n = next(items)
    params = config.params(n)
    t0 = time.perf_counter()
    nodes, stack = build_stack(params, seed)
    exact = Graph(n)
    buf_idx, buf_delta = [], []
    updates = 0

    def flush():
        if buf_idx:
            stack.apply_updates(buf_idx, buf_delta)
            buf_idx.clear()
            buf_delta.clear()

    for no, delta, e in items:
        try:
            exact.insert(e) if delta > 0 else exact.delete(e)
        except StreamViolation as exc:
            raise StreamError(f"line {no}: {exc}") from None
        buf_idx.append(e.linear_index)
        buf_delta.append(delta)
        updates += 1
        if len(buf_idx) >= BATCH:
            flush()
    flush()
    ingest = time.perf_counter() - t0
    blob = stack.to_bytes()
    if config.checkpoint:
        Path(config.checkpoint).write_bytes(blob)
    t1 = time.perf_counter()
    decoder = Decoder(params, nodes, stack)
    h = decoder.run()
    decode_time = time.perf_counter() - t1
    report = RunReport(n=n, variant=params.variant, gamma=params.gamma, levels=params.levels,
                       tree_nodes=len(nodes), updates=updates, edges_in=len(exact), edges_out=len(h),
                       sketch_bytes=len(blob), ingest_seconds=ingest, decode_seconds=decode_time,
                       stats=dict(decoder.stats))
    if config.verify:
        report.verified = is_spectral_sparsifier(exact, h, config.eps)
    return h, report


def selftest(config: RunConfig) -> list[tuple[str, bool, str]]:
    """Quick oracle, linearity, PRG and end-to-end checks at ``n`` in {16, 64}."""
    results: list[tuple[str, bool, str]] = []

    def check(name, ok, detail=""):
        results.append((name, bool(ok), detail))

    for k in (5, 16):
        path = Graph(k, [(i, i + 1) for i in range(k - 1)])
        r = exact_effective_resistance(path, 0, k - 1)
        check(f"path P{k} end-to-end resistance", abs(r - (k - 1)) < 1e-8, f"{r:.10f}")
        cyc = Graph(k, [(i, (i + 1) % k) for i in range(k)])
        r = exact_effective_resistance(cyc, 0, 1)
        check(f"cycle C{k} edge resistance", abs(r - (k - 1) / k) < 1e-8, f"{r:.10f}")
        comp = Graph(k, [(i, j) for i in range(k) for j in range(i + 1, k)])
        r = exact_effective_resistance(comp, 0, 1)
        check(f"complete K{k} edge resistance", abs(r - 2 / k) < 1e-8, f"{r:.10f}")

    seed = parse_seed(config.seed)
    rng = np.random.default_rng(int.from_bytes(seed[:8].ljust(8, b"\0"), "little"))
    for n in (16, 64):
        params = GlobalParams(n=n, variant="ballcarve")
        pairs = np.array([(u, v) for v in range(n) for u in range(v)])
        chosen = pairs[rng.choice(len(pairs), size=min(len(pairs), 3 * n), replace=False)]
        idx = chosen[:, 1] * (chosen[:, 1] - 1) // 2 + chosen[:, 0]
        _, a = build_stack(params, seed)
        _, b = build_stack(params, seed)
        a.apply_updates(idx, np.ones(len(idx), dtype=np.int64))
        perm = rng.permutation(len(idx))
        b.apply_updates(idx[perm], np.ones(len(idx), dtype=np.int64))
        check(f"sketch linearity under permutation (n={n})", a.to_bytes() == b.to_bytes())

    chain = PrgChain.create(seed)
    bits = chain.bits(0, 1 << 16)
    again = PrgChain.create(seed).bits(0, 1 << 16)
    check("prg determinism", np.array_equal(bits, again))
    p1, p2 = monobit_pvalue(bits), byte_chi_square_pvalue(bits)
    check("prg monobit", p1 > 1e-3, f"p={p1:.3g}")
    check("prg byte chi-square", p2 > 1e-3, f"p={p2:.3g}")

    k16 = [f"+ {u} {v}" for v in range(16) for u in range(v)]
    for variant in VARIANTS:
        cfg = RunConfig(variant=variant, seed=config.seed, eps=0.5, verify=True)
        _, rep = run_stream(cfg, ["n 16"] + k16)
        check(f"{variant} sparsifier of K16 verifies", rep.verified, f"{rep.edges_out} edges")
    rng64 = np.random.default_rng(7)
    lines = ["n 64"] + [f"+ {u} {v}" for v in range(64) for u in range(v) if rng64.random() < 0.3 or v == u + 1]
    _, rep = run_stream(RunConfig(variant="ballcarve", seed=config.seed, verify=True), lines)
    check("ballcarve sparsifier of G(64, 0.3) verifies", rep.verified, f"{rep.edges_out} edges")
    return results


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, help="vertex count (must match the stream header)")
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--gamma-base", type=float, help="sampling base Gamma (default: single-level value)")
    p.add_argument("--variant", choices=VARIANTS, default="ballcarve")
    p.add_argument("--seed", default="0", help="integer or hex seed")
    p.add_argument("--qjl", type=int, help="rows of the resistance embedding")
    p.add_argument("--d-threshold", type=float, help="peeling degree threshold")
    p.add_argument("--lambda-threshold", type=int, help="connectivity threshold for low-connectivity edges")
    p.add_argument("--beta", type=float, help="heaviness threshold for heavy-edge recovery")
    p.add_argument("--verify", action="store_true", help="check the output against the exact graph")
    p.add_argument("--out", help="write the sparsifier here instead of stdout")
    p.add_argument("--checkpoint", help="write the sketch state here before decoding")


def _config(args) -> RunConfig:
    return RunConfig(n=args.n, eps=args.eps, gamma_base=args.gamma_base, variant=args.variant,
                     seed=args.seed, q_jl=args.qjl, d_threshold=args.d_threshold,
                     lambda_threshold=args.lambda_threshold, beta=args.beta, verify=args.verify,
                     out=args.out, checkpoint=args.checkpoint)


def _open(path: str) -> TextIO:
    return sys.stdin if path == "-" else open(path, encoding="utf-8")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if argv and argv[0] == "selftest":
        p = argparse.ArgumentParser(prog="graphsketch selftest")
        p.add_argument("--seed", default="0")
        args = p.parse_args(argv[1:])
        failures = 0
        for name, ok, detail in selftest(RunConfig(seed=args.seed)):
            failures += not ok
            print(f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))
        return 1 if failures else EXIT_OK

    if argv and argv[0] == "run":
        argv = argv[1:]
    p = argparse.ArgumentParser(prog="graphsketch", description="Sketch a dynamic graph stream and decode a spectral sparsifier.")
    p.add_argument("stream", help="update stream file, or - for stdin")
    _add_run_flags(p)
    args = p.parse_args(argv)
    try:
        config = _config(args)
    except ValueError as exc:
        p.error(str(exc))
    try:
        with _open(args.stream) as fh:
            h, report = run_stream(config, fh)
    except (StreamError, OSError) as exc:
        print(f"stream error: {exc}", file=sys.stderr)
        return EXIT_STREAM
    except (DecodeFailure, CapacityExceeded, NotConverged) as exc:
        print(f"decode failure: {exc}", file=sys.stderr)
        return EXIT_DECODE
    text = format_edges(h)
    if config.out:
        Path(config.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(json.dumps(asdict(report), sort_keys=True), file=sys.stderr)
    if config.verify and not report.verified:
        return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
