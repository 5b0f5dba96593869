"""On-disk case datasets: ``images/case_%05d.png`` plus ``manifest.csv``."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_PATTERN = "case_{:05d}.png"


@dataclass
class Dataset:
    images: np.ndarray       # (n, h, w, 3) in [0, 1], 8-bit quantized
    params: np.ndarray       # (n, d)
    responses: dict          # name -> (n,) array, always includes "objective"
    param_names: tuple
    case_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.case_ids)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.params[idx],
                       {k: v[idx] for k, v in self.responses.items()}, self.param_names,
                       self.case_ids[idx])


def quantize(image: np.ndarray) -> np.ndarray:
    """uint8 RGB from a [0, 1] float image."""
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, image: np.ndarray) -> None:
    # Pillow writes no timestamps into PNGs by default, so output is reproducible.
    Image.fromarray(quantize(image), mode="RGB").save(path, format="PNG", optimize=False, compress_level=6)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def check_writable(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PermissionError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    return out


def write_dataset(benchmark, params: np.ndarray, out_dir, resolution: int = 64) -> Path:
    """Render and simulate every design row of ``params``; returns the manifest path."""
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    if params.shape[0] == 0:
        raise ValueError("dataset must contain at least one case")
    out = check_writable(out_dir)
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    rows = []
    extra = None
    for i, alpha in enumerate(params):
        save_png(img_dir / IMAGE_PATTERN.format(i), benchmark.render(alpha, resolution))
        resp = benchmark.evaluate(alpha)
        if extra is None:
            extra = [k for k in resp if k != "objective"]
        rows.append([i, *(repr(float(a)) for a in alpha), repr(float(resp["objective"])),
                     *(repr(float(resp[k])) for k in extra)])
    manifest = out / "manifest.csv"
    tmp = manifest.with_suffix(".csv.tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["case_id", *benchmark.param_names, "objective", *extra])
        w.writerows(rows)
    os.replace(tmp, manifest)
    return manifest


def read_manifest(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader], dtype=np.float64)
    return header, data.reshape(-1, len(header))


def read_dataset(dataset_dir, param_names) -> Dataset:
    root = Path(dataset_dir)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest at {manifest}")
    header, data = read_manifest(manifest)
    param_names = tuple(param_names)
    missing = [p for p in (*param_names, "objective") if p not in header]
    if missing:
        raise ValueError(f"manifest {manifest} lacks columns {missing}")
    ids = data[:, 0].astype(np.int64)
    params = data[:, [header.index(p) for p in param_names]]
    responses = {k: data[:, header.index(k)] for k in header[1:] if k not in param_names}
    images = []
    for i in ids:
        path = root / "images" / IMAGE_PATTERN.format(i)
        if not path.exists():
            raise FileNotFoundError(f"missing case image {path}")
        images.append(load_png(path))
    return Dataset(np.stack(images), params, responses, param_names, ids)
