"""Figure rendering (headless Agg backend, PNG + SVG)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .modal import FieldGrid


def save_field_images(field: FieldGrid, freq_hz: float, out_dir,
                      stem: str | None = None) -> list[Path]:
    """Magnitude (dB) and phase maps of one frequency bin."""
    freqs = np.asarray(field.freqs)
    k = int(np.argmin(np.abs(freqs - freq_hz)))
    sl = field.data[:, :, k]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"{field.room_id}_{freqs[k]:g}hz"
    paths = []
    mag_db = 20 * np.log10(np.maximum(np.abs(sl), 1e-12))
    for name, img, cmap, label in (
        ("magnitude", mag_db, "viridis", "|G| [dB]"),
        ("phase", np.angle(sl), "twilight", "arg G [rad]"),
    ):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        im = ax.imshow(img.T, origin="lower", cmap=cmap, aspect="auto")
        ax.set_xlabel("grid w")
        ax.set_ylabel("grid h")
        ax.set_title(f"{label} at {freqs[k]:g} Hz")
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        path = out_dir / f"{stem}_{name}.png"
        fig.savefig(path, dpi=130)
        plt.close(fig)
        paths.append(path)
    return paths


def _group_rows(rows: list[dict]):
    """rows -> {(method, sweep_key): (freqs, complex_db, abs_db, n_rooms)}"""
    groups: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        key = (row.get("method") or "", row["sweep_key"])
        groups.setdefault(key, []).append(row)
    out = {}
    for key, grp in groups.items():
        grp = sorted(grp, key=lambda r: r["freq_hz"])
        out[key] = (
            np.array([r["freq_hz"] for r in grp]),
            np.array([r["nmse_complex_db"] for r in grp]),
            np.array([r["nmse_abs_db"] for r in grp]),
            grp[0]["n_rooms"],
        )
    return out


def save_sweep_curves(rows: list[dict], out_dir, stem: str = "sweep") -> list[Path]:
    """Per-frequency NMSE curves, one line per (method, sweep setting).

    Writes both metrics, each as PNG and SVG.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = _group_rows(rows)
    paths = []
    for metric_idx, metric_name in ((1, "nmse_complex"), (2, "nmse_abs")):
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        for (method, key), vals in sorted(groups.items()):
            label = f"{method} {key}".strip()
            ax.plot(vals[0], vals[metric_idx], label=label, linewidth=1.2)
        ax.set_xlabel("frequency [Hz]")
        ax.set_ylabel(f"{metric_name} [dB]")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=7, ncols=2)
        fig.tight_layout()
        for ext in ("png", "svg"):
            path = out_dir / f"{stem}_{metric_name}.{ext}"
            fig.savefig(path, dpi=130)
            paths.append(path)
        plt.close(fig)
    return paths


def save_sweep_summary(rows: list[dict], out_dir,
                       stem: str = "summary") -> list[Path]:
    """Frequency-averaged NMSE against the sweep setting, per method."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = _group_rows(rows)
    by_method: dict[str, list[tuple[float, float, float]]] = {}
    for (method, key), vals in groups.items():
        try:
            x = float(key)
        except ValueError:
            x = float("nan")
        by_method.setdefault(method, []).append(
            (x, float(vals[1].mean()), float(vals[2].mean())))
    paths = []
    for metric_idx, metric_name in ((1, "nmse_complex"), (2, "nmse_abs")):
        fig, ax = plt.subplots(figsize=(5.2, 3.8))
        for method, pts in sorted(by_method.items()):
            pts = sorted(pts)
            xs = [p[0] for p in pts]
            ys = [p[metric_idx] for p in pts]
            ax.plot(xs, ys, marker="o", label=method or "method")
        ax.set_xlabel("sweep setting")
        ax.set_ylabel(f"mean {metric_name} [dB]")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        for ext in ("png", "svg"):
            path = out_dir / f"{stem}_{metric_name}.{ext}"
            fig.savefig(path, dpi=130)
            paths.append(path)
        plt.close(fig)
    return paths


def save_loss_curves(history_rows: list[tuple[int, float, float]],
                     out_dir, stem: str = "loss") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    epochs = [r[0] for r in history_rows]
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ax.plot(epochs, [r[1] for r in history_rows], label="train")
    ax.plot(epochs, [r[2] for r in history_rows], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("per-sample loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    paths = []
    for ext in ("png", "svg"):
        path = out_dir / f"{stem}.{ext}"
        fig.savefig(path, dpi=130)
        paths.append(path)
    plt.close(fig)
    return paths
