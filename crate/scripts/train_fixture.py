#!/usr/bin/env python3
"""Trains the small fixture classifier shipped under fixtures/.

A 3-class Gaussian-blob problem in 4D, fit by a [4, 12, 12, 3] ReLU MLP
with full-batch gradient descent on softmax cross-entropy. Writes the
model in the jacobound JSON schema plus ten labeled test inputs.
"""

import json
import pathlib

import numpy as np

rng = np.random.default_rng(20240817)

CENTERS = np.array(
    [
        [1.0, 1.0, -0.5, 0.0],
        [-1.0, 0.5, 1.0, -0.5],
        [0.0, -1.0, -1.0, 1.0],
    ]
)
N_PER_CLASS = 200
SIGMA = 0.35

X = np.concatenate([c + SIGMA * rng.standard_normal((N_PER_CLASS, 4)) for c in CENTERS])
y = np.repeat(np.arange(3), N_PER_CLASS)

dims = [4, 12, 12, 3]
weights = [rng.standard_normal((dims[i + 1], dims[i])) / np.sqrt(dims[i]) for i in range(3)]
biases = [np.zeros(dims[i + 1]) for i in range(3)]


def forward(x):
    acts = [x]
    h = x
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w.T + b
        h = np.maximum(z, 0.0) if i < 2 else z
        acts.append(h)
    return acts


LR = 0.5
for step in range(4000):
    acts = forward(X)
    logits = acts[-1]
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    grad = p.copy()
    grad[np.arange(len(y)), y] -= 1.0
    grad /= len(y)
    for i in reversed(range(3)):
        gw = grad.T @ acts[i]
        gb = grad.sum(axis=0)
        if i > 0:
            grad = (grad @ weights[i]) * (acts[i] > 0)
        weights[i] -= LR * gw
        biases[i] -= LR * gb

acts = forward(X)
acc = (acts[-1].argmax(axis=1) == y).mean()
print(f"train accuracy: {acc:.4f}")
assert acc > 0.99

model = {
    "layers": [
        {
            "weights": [[float(v) for v in row] for row in w],
            "bias": [float(v) for v in b],
            "activation": {"kind": "relu"} if i < 2 else None,
        }
        for i, (w, b) in enumerate(zip(weights, biases))
    ]
}

# held-out inputs, kept only if classified correctly with a solid margin
inputs = []
while len(inputs) < 10:
    c = len(inputs) % 3
    x = CENTERS[c] + SIGMA * rng.standard_normal(4)
    logits = forward(x[None, :])[-1][0]
    order = np.argsort(logits)
    if order[-1] == c and logits[order[-1]] - logits[order[-2]] > 1.0:
        inputs.append({"x": [float(v) for v in x], "label": int(c)})

out = pathlib.Path(__file__).resolve().parent.parent / "fixtures"
out.mkdir(exist_ok=True)
(out / "trained_net.json").write_text(json.dumps(model))
(out / "trained_inputs.json").write_text(json.dumps(inputs, indent=1))
print(f"wrote {out}/trained_net.json and trained_inputs.json")
