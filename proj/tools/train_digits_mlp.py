#!/usr/bin/env python3
"""Train the 64-32-10 digits MLP used by `xbarmap dnn-eval` and write fixtures.

Writes <out>/digits_mlp.json (network) and <out>/digits_200.csv (200 held-out
samples, 64 pixel columns in [0, 1] followed by the label).
"""
import argparse
import json
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split
from sklearn.neural_network import MLPClassifier


def matrix_json(m):
    m = np.asarray(m, dtype=float)
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "data": [float(v) for v in m.ravel()]}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    digits = load_digits()
    x = digits.data / 16.0
    y = digits.target
    x_train, x_test, y_train, y_test = train_test_split(
        x, y, test_size=200, random_state=args.seed, stratify=y)

    clf = MLPClassifier(hidden_layer_sizes=(32,), activation="relu", alpha=1e-3,
                        max_iter=2000, random_state=args.seed)
    clf.fit(x_train, y_train)
    print(f"train accuracy {clf.score(x_train, y_train):.4f}, fixture accuracy {clf.score(x_test, y_test):.4f}")

    layers = []
    for k, (w, b) in enumerate(zip(clf.coefs_, clf.intercepts_)):
        last = k == len(clf.coefs_) - 1
        layers.append({"weights": matrix_json(w.T), "bias": [float(v) for v in b],
                       "activation": "none" if last else "relu"})
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "digits_mlp.json").write_text(json.dumps({"schema_version": 1, "layers": layers}) + "\n")
    with open(args.out / "digits_200.csv", "w") as f:
        for row, label in zip(x_test, y_test):
            f.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")


if __name__ == "__main__":
    main()
