"""Decode time of the ball-carving and all-pairs decoders as n grows.

    python3 demos/decode_scaling.py [--sizes 64 128 256] [--degree 6]

Both decoders run on the same random regular graph with the same pinned
thresholds; the fitted slope of log(time) against log(n) is printed.
"""

import argparse
import time

import networkx as nx
import numpy as np

from graphsketch.decode import Decoder, GlobalParams, build_stack
from graphsketch.graph_core import Graph


def decode_time(g: Graph, variant: str) -> tuple[float, int]:
    params = GlobalParams(n=g.n, variant=variant, q_jl=24, d_threshold=4, lambda_threshold=2, beta=0.5,
                          c_flce=20)
    nodes, stack = build_stack(params, b"demo")
    stack.apply_updates(g.edge_indices(), np.ones(len(g), dtype=np.int64))
    t0 = time.perf_counter()
    h = Decoder(params, nodes, stack).run()
    return time.perf_counter() - t0, len(h)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    p.add_argument("--degree", type=int, default=6)
    args = p.parse_args()

    graphs = {n: Graph(n, nx.random_regular_graph(args.degree, n, seed=n).edges()) for n in args.sizes}
    for variant in ("ballcarve", "brute"):
        times = []
        for n, g in graphs.items():
            secs, edges = decode_time(g, variant)
            times.append(secs)
            print(f"{variant:9s} n={n:4d} edges={edges:5d} decode {secs:7.2f}s")
        if len(times) > 1:
            slope = np.polyfit(np.log(args.sizes), np.log(times), 1)[0]
            print(f"{variant:9s} fitted exponent {slope:.2f}\n")


if __name__ == "__main__":
    main()
