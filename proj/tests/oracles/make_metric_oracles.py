"""Freezes reference values for the topological measures using networkx.

Run once; the output JSON is committed and read by test_metrics.
    python3 tests/oracles/make_metric_oracles.py > tests/data/metric_oracles.json
"""
import json
import random

import networkx as nx
import numpy as np


def random_graph(n, seed):
    rng = random.Random(seed)
    while True:
        w = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.7:
                    w[i, j] = w[j, i] = rng.uniform(0.05, 1.0)
        g = nx.from_numpy_array(w)
        if nx.is_connected(g):
            return w, g


def main():
    cases = []
    for k in range(5):
        n = 20
        w, g = random_graph(n, 1000 + k)
        for u, v, d in g.edges(data=True):
            d["dist"] = 1.0 / d["weight"]
        partition = [i % 3 for i in range(n)]
        deg = [g.degree(i, weight="weight") / (n - 1) for i in range(n)]
        btw = nx.betweenness_centrality(g, weight="dist", normalized=True)
        clo = nx.closeness_centrality(g, distance="dist", wf_improved=True)
        eig = nx.eigenvector_centrality_numpy(g, weight="weight")
        clu = nx.clustering(g, weight="weight")
        comms = [{i for i in range(n) if partition[i] == c} for c in range(3)]
        q = nx.community.modularity(g, comms, weight="weight")
        part = []
        for i in range(n):
            s = w[i].sum()
            kappa = [sum(w[i, j] for j in range(n) if partition[j] == c) for c in range(3)]
            part.append(1.0 - sum((x / s) ** 2 for x in kappa))
        dist = dict(nx.all_pairs_dijkstra_path_length(g, weight="dist"))
        cpl = sum(dist[i][j] for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
        cases.append({
            "n": n,
            "weights": [repr(float(x)) for x in w.flatten()],
            "partition": partition,
            "degree": [repr(float(x)) for x in deg],
            "betweenness": [repr(float(btw[i])) for i in range(n)],
            "closeness": [repr(float(clo[i])) for i in range(n)],
            "eigenvector": [repr(float(abs(eig[i]))) for i in range(n)],
            "clustering": [repr(float(clu[i])) for i in range(n)],
            "participation": [repr(float(x)) for x in part],
            "modularity": repr(float(q)),
            "characteristic_path_length": repr(float(cpl)),
        })
    print(json.dumps({"generator": "networkx " + nx.__version__, "cases": cases}, indent=1))


if __name__ == "__main__":
    main()
