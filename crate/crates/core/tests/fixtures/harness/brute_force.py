"""Exhaustive oracles for tiny instances. Prints one RESULT line.

usage: brute_force.py knapsack CAPACITY W:V [W:V ...]
       brute_force.py assignment ROW;ROW...   (e.g. "1,2;3,1", minimized)
"""
import itertools
import sys

MAX_SPACE = 1 << 20


def knapsack(capacity, items):
    if 1 << len(items) > MAX_SPACE:
        raise SystemExit("SpaceTooLarge")
    best = 0
    for pick in itertools.product((0, 1), repeat=len(items)):
        w = sum(p * it[0] for p, it in zip(pick, items))
        if w <= capacity:
            best = max(best, sum(p * it[1] for p, it in zip(pick, items)))
    return best


def assignment(costs):
    n = len(costs)
    count = 1
    for i in range(2, n + 1):
        count *= i
    if count > MAX_SPACE:
        raise SystemExit("SpaceTooLarge")
    return min(sum(costs[i][p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def main(argv):
    kind = argv[0]
    if kind == "knapsack":
        items = [tuple(float(x) for x in a.split(":")) for a in argv[2:]]
        print(f"RESULT: {knapsack(float(argv[1]), items)}")
    elif kind == "assignment":
        costs = [[float(x) for x in row.split(",")] for row in argv[1].split(";")]
        print(f"RESULT: {assignment(costs)}")
    else:
        raise SystemExit(f"unknown instance kind {kind}")


if __name__ == "__main__":
    main(sys.argv[1:])
