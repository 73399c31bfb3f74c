"""Sketch a dynamic stream with churn and decode it with every variant.

    python3 demos/dynamic_stream.py [--n 48] [--seed 7]

The stream inserts a random graph plus decoy edges, then deletes the
decoys, so the sketches only ever see the final graph through linearity.
"""

import argparse
import itertools

import networkx as nx
import numpy as np

from graphsketch.cli import RunConfig, run_stream
from graphsketch.exact_oracles import generalized_spectrum
from graphsketch.graph_core import Graph, laplacian


def churn_stream(g: nx.Graph, rng: np.random.Generator) -> list[str]:
    absent = [e for e in itertools.combinations(g.nodes, 2) if not g.has_edge(*e)]
    decoys = [absent[i] for i in rng.choice(len(absent), len(absent) // 5, replace=False)]
    inserts = list(g.edges) + decoys
    lines = [f"n {g.number_of_nodes()}"]
    lines += [f"+ {u} {v}" for u, v in (inserts[i] for i in rng.permutation(len(inserts)))]
    lines += [f"- {u} {v}" for u, v in decoys]
    return lines


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=48)
    p.add_argument("--p", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=7)
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    g = nx.gnp_random_graph(args.n, args.p, seed=args.seed)
    while not nx.is_connected(g):
        g = nx.gnp_random_graph(args.n, args.p, seed=int(rng.integers(1 << 30)))
    lines = churn_stream(g, rng)
    exact = laplacian(Graph(args.n, g.edges))
    print(f"graph: n={args.n}, m={g.number_of_edges()}, stream length {len(lines) - 1}")
    print(f"{'variant':10s} {'edges':>6s} {'lo':>6s} {'hi':>6s} {'sketch MB':>10s} {'decode s':>9s}")
    for variant in ("brute", "n32", "ballcarve"):
        h, report = run_stream(RunConfig(variant=variant, seed=hex(args.seed), verify=True), lines)
        spec, _ = generalized_spectrum(exact, laplacian(h))
        print(f"{variant:10s} {len(h):6d} {spec.min():6.3f} {spec.max():6.3f} "
              f"{report.sketch_bytes / 2**20:10.1f} {report.decode_seconds:9.2f}"
              f"{'' if report.verified else '  (outside 1 +- eps)'}")


if __name__ == "__main__":
    main()
