"""Versioned on-disk format for simulated frames.

Layout: a one-line format tag, a JSON header line carrying the frame
configuration (and the true AR coefficients when ground truth is kept),
then a CSV body with the pilot sequence and the complex arrays stored as
paired real columns, row-major in time:

    # relaytrack-frame v1
    # {"n_symbols": ..., "n_relays": ..., "snr_db": ..., "truth_alpha": [...], ...}
    t,s_re,s_im,y1_re,y1_im[,h1_re,h1_im,g1_re,g1_im,w1_re,w1_im]...

Floats round-trip at 17 significant digits, so write/read/write is
byte-stable.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import Frame, FrameConfig, LatentPath, StaticParams

__all__ = ["write_frame", "read_frame", "FORMAT_TAG"]

FORMAT_TAG = "# relaytrack-frame v1"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_frame(frame: Frame, path, strip_truth: bool = False) -> Path:
    """Write a frame file; ``strip_truth`` drops the simulated ground truth."""
    path = Path(path)
    cfg = frame.config
    header = {
        "n_symbols": cfg.n_symbols,
        "n_relays": cfg.n_relays,
        "snr_db": cfg.snr_db,
        "has_truth": frame.has_truth and not strip_truth,
    }
    if header["has_truth"]:
        header["truth_alpha"] = [float(a) for a in frame.truth_params.alpha]
        header["truth_beta"] = [float(b) for b in frame.truth_params.beta]

    columns = ["t", "s_re", "s_im"]
    for l in range(cfg.n_relays):
        columns += [f"y{l + 1}_re", f"y{l + 1}_im"]
    if header["has_truth"]:
        for name in ("h", "g", "w"):
            for l in range(cfg.n_relays):
                columns += [f"{name}{l + 1}_re", f"{name}{l + 1}_im"]

    lines = [FORMAT_TAG, "# " + json.dumps(header, sort_keys=True), ",".join(columns)]
    for t in range(cfg.n_symbols):
        row = [str(t), _fmt(cfg.pilots[t].real), _fmt(cfg.pilots[t].imag)]
        for l in range(cfg.n_relays):
            row += [_fmt(frame.y[l, t].real), _fmt(frame.y[l, t].imag)]
        if header["has_truth"]:
            for arr in (frame.truth_path.h, frame.truth_path.g, frame.truth_path.w):
                for l in range(cfg.n_relays):
                    row += [_fmt(arr[l, t].real), _fmt(arr[l, t].imag)]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_frame(path) -> Frame:
    """Parse a frame file back into a Frame (with truth when present)."""
    lines = Path(path).read_text().splitlines()
    if len(lines) < 4 or lines[0] != FORMAT_TAG:
        raise ValueError(f"{path}: not a recognized frame file (expected {FORMAT_TAG!r})")
    header = json.loads(lines[1].lstrip("# "))
    T, L = header["n_symbols"], header["n_relays"]
    has_truth = header.get("has_truth", False)

    body = [line.split(",") for line in lines[3 : 3 + T]]
    if len(body) != T:
        raise ValueError(f"{path}: expected {T} data rows, found {len(body)}")

    def grab(rows, col):
        return np.array([float(r[col]) for r in rows])

    pilots = grab(body, 1) + 1j * grab(body, 2)
    col = 3
    y = np.empty((L, T), dtype=complex)
    for l in range(L):
        y[l] = grab(body, col) + 1j * grab(body, col + 1)
        col += 2
    cfg = FrameConfig(n_symbols=T, n_relays=L, pilots=pilots, snr_db=header["snr_db"])
    if not has_truth:
        return Frame(y=y, config=cfg)

    parts = {}
    for name in ("h", "g", "w"):
        arr = np.empty((L, T), dtype=complex)
        for l in range(L):
            arr[l] = grab(body, col) + 1j * grab(body, col + 1)
            col += 2
        parts[name] = arr
    truth_params = StaticParams(alpha=header["truth_alpha"], beta=header["truth_beta"])
    return Frame(y=y, config=cfg, truth_params=truth_params, truth_path=LatentPath(**parts))
