"""Independent float64 reference for the checked-in fixtures.

Reads the fixture archives with nothing but the standard library, runs plain
scalar loops, and writes fixtures/golden/reference.json. The Rust test-suite
compares its own results against that file.

    python3 python/reference_oracle.py [fixtures-dir]
"""

import json
import math
import struct
import sys
from pathlib import Path


def load_model(path):
    manifest = json.loads((path / "model.json").read_text())
    blob = (path / "weights.bin").read_bytes()

    def tensor(entry):
        start, length = entry["offset"], entry["length"]
        values = struct.unpack("<%df" % (length // 4), blob[start:start + length])
        return {"shape": entry["shape"], "data": list(values)}

    layers = []
    for layer in manifest["layers"]:
        layer = dict(layer)
        for key in ("weight", "bias"):
            if key in layer:
                layer[key] = tensor(layer[key])
        layers.append(layer)
    return {"input_shape": manifest["input_shape"], "layers": layers}


def load_dataset(path):
    manifest = json.loads((path / "data.json").read_text())
    shape = manifest["shape"]
    n = shape[0]
    per = 1
    for d in shape[1:]:
        per *= d
    raw = (path / "samples.bin").read_bytes()
    values = struct.unpack("<%df" % (n * per), raw)
    samples = [list(values[i * per:(i + 1) * per]) for i in range(n)]
    labels = list((path / "labels.bin").read_bytes())
    return {"shape": shape[1:], "samples": samples, "labels": labels,
            "num_classes": manifest["num_classes"]}


def dense(weight, bias, x):
    out_units, in_units = weight["shape"]
    w = weight["data"]
    return [sum(w[i * in_units + j] * x[j] for j in range(in_units)) + bias["data"][i]
            for i in range(out_units)]


def conv2d(weight, bias, stride, padding, x, shape):
    oc, ic, kh, kw = weight["shape"]
    _, h, w = shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    wd = weight["data"]
    out = []
    for o in range(oc):
        for r in range(oh):
            for c in range(ow):
                acc = 0.0
                for i in range(ic):
                    for u in range(kh):
                        for v in range(kw):
                            y = r * stride + u - padding
                            z = c * stride + v - padding
                            if 0 <= y < h and 0 <= z < w:
                                acc += wd[((o * ic + i) * kh + u) * kw + v] * x[(i * h + y) * w + z]
                out.append(acc + bias["data"][o])
    return out, [oc, oh, ow]


def maxpool(window, stride, x, shape):
    ch, h, w = shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    out = []
    for k in range(ch):
        for r in range(oh):
            for c in range(ow):
                out.append(max(x[(k * h + r * stride + u) * w + c * stride + v]
                               for u in range(window) for v in range(window)))
    return out, [ch, oh, ow]


def forward(model, x, masks=None):
    shape = list(model["input_shape"])
    acts = []
    for index, layer in enumerate(model["layers"]):
        kind = layer["kind"]
        weight = layer.get("weight")
        if weight is not None and masks is not None and index in masks:
            weight = {"shape": weight["shape"],
                      "data": [w if keep else 0.0 for w, keep in zip(weight["data"], masks[index])]}
        if kind == "dense":
            x = dense(weight, layer["bias"], x)
            shape = [len(x)]
        elif kind == "conv2d":
            x, shape = conv2d(weight, layer["bias"], layer["stride"], layer["padding"], x, shape)
        elif kind == "relu":
            x = [max(0.0, v) for v in x]
        elif kind == "maxpool2d":
            x, shape = maxpool(layer["window"], layer["stride"], x, shape)
        elif kind == "flatten":
            shape = [len(x)]
        else:
            raise ValueError("unknown layer kind %r" % kind)
        acts.append(list(x))
    return acts


def evaluate(model, dataset, masks=None):
    correct = 0
    loss = 0.0
    for x, label in zip(dataset["samples"], dataset["labels"]):
        scores = forward(model, x, masks)[-1]
        best = max(range(len(scores)), key=lambda k: (scores[k], -k))
        correct += best == label
        top = max(scores)
        exp = [math.exp(s - top) for s in scores]
        p = exp[label] / sum(exp)
        loss += -math.log(max(p, 1e-12))
    n = len(dataset["labels"])
    return {"accuracy": correct / n, "mean_loss": loss / n}


def magnitude_masks(model, ratio):
    masks = {}
    for index, layer in enumerate(model["layers"]):
        if "weight" not in layer:
            continue
        data = layer["weight"]["data"]
        order = sorted(range(len(data)), key=lambda k: (abs(data[k]), k))
        cut = math.floor(ratio * len(data))
        keep = [True] * len(data)
        for k in order[:cut]:
            keep[k] = False
        masks[index] = keep
    return masks


def lap_dense_scores(model, index):
    """|W[i][j]| * ||W_prev[j, :]|| * ||W_next[:, i]|| for three dense layers in a row."""
    weighted = [k for k, layer in enumerate(model["layers"]) if "weight" in layer]
    pos = weighted.index(index)
    prev = model["layers"][weighted[pos - 1]]["weight"]
    cur = model["layers"][index]["weight"]
    nxt = model["layers"][weighted[pos + 1]]["weight"]
    out_units, in_units = cur["shape"]
    prev_in = prev["shape"][1]
    next_out = nxt["shape"][0]
    prev_norm = [math.sqrt(sum(prev["data"][j * prev_in + k] ** 2 for k in range(prev_in)))
                 for j in range(in_units)]
    next_norm = [math.sqrt(sum(nxt["data"][m * out_units + i] ** 2 for m in range(next_out)))
                 for i in range(out_units)]
    return [abs(cur["data"][i * in_units + j]) * prev_norm[j] * next_norm[i]
            for i in range(out_units) for j in range(in_units)]


def main():
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "fixtures"
    mlp = load_model(root / "models" / "mlp-blobs")
    cnn = load_model(root / "models" / "cnn-shapes")
    blobs = load_dataset(root / "datasets" / "blobs-test")
    shapes = load_dataset(root / "datasets" / "shapes-test")

    box = {"shape": [1, 1, 3, 3], "data": [1.0 / 9.0] * 9}
    smoothed, smoothed_shape = conv2d(box, {"shape": [1], "data": [0.0]}, 1, 1, shapes["samples"][0], shapes["shape"])

    reference = {
        "mlp": {
            "sample0_activations": forward(mlp, blobs["samples"][0]),
            "baseline": evaluate(mlp, blobs),
            "map_0_5": evaluate(mlp, blobs, magnitude_masks(mlp, 0.5)),
            "map_0_5_pruned": [m.count(False) for m in magnitude_masks(mlp, 0.5).values()],
            "lap_layer2_scores": lap_dense_scores(mlp, 2),
        },
        "cnn": {
            "sample0_activations": forward(cnn, shapes["samples"][0]),
            "baseline": evaluate(cnn, shapes),
        },
        "box_blur": {"sample": 0, "padding": 1, "shape": smoothed_shape, "values": smoothed},
    }
    out = root / "golden" / "reference.json"
    out.write_text(json.dumps(reference, indent=1) + "\n")
    print("wrote", out)


if __name__ == "__main__":
    main()
