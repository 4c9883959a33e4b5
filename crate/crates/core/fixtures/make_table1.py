"""Regenerates table1.json and table1_train.json.

Imagery is not reproduced; each annotation is a small octagon laid out on a
grid so that instances never overlap.
"""
import json
import math
import os

SPLITS = [("training", 96, 182, 1042), ("test", 24, 33, 118)]
W, H = 1280, 1024
CELL = 120


def octagon(cx, cy, rx, ry):
    pts = []
    for k in range(8):
        a = 2 * math.pi * k / 8
        pts += [round(cx + rx * math.cos(a), 2), round(cy + ry * math.sin(a), 2)]
    return pts


def area(flat):
    xs, ys = flat[0::2], flat[1::2]
    n = len(xs)
    return abs(sum(xs[i] * ys[(i + 1) % n] - xs[(i + 1) % n] * ys[i] for i in range(n))) / 2


def build(splits):
    images, annotations = [], []
    image_id = 1
    ann_id = 1
    for name, n_images, n_hatch, n_full in splits:
        labels = ["hatch"] * n_hatch + ["full"] * n_full
        # Interleave classes evenly across the split's images.
        labels.sort(key=lambda c: 0 if c == "hatch" else 1)
        slots = [[] for _ in range(n_images)]
        for k, label in enumerate(labels):
            slots[k % n_images].append(label)
        for slot in slots:
            images.append({"id": image_id, "file_name": f"{name}_{image_id:03d}.png",
                           "width": W, "height": H, "split": name})
            for j, label in enumerate(slot):
                cx = CELL / 2 + (j % (W // CELL)) * CELL
                cy = CELL / 2 + (j // (W // CELL)) * CELL
                seg = octagon(cx, cy, 45, 16)
                annotations.append({"id": ann_id, "image_id": image_id,
                                    "category_id": 1 if label == "hatch" else 2,
                                    "segmentation": [seg], "area": area(seg), "iscrowd": 0})
                ann_id += 1
            image_id += 1
    return {"images": images, "annotations": annotations,
            "categories": [{"id": 1, "name": "hatch"}, {"id": 2, "name": "full"}]}


here = os.path.dirname(os.path.abspath(__file__))
for fname, splits in [("table1.json", SPLITS), ("table1_train.json", SPLITS[:1])]:
    with open(os.path.join(here, fname), "w") as f:
        json.dump(build(splits), f, separators=(",", ":"))
        f.write("\n")
