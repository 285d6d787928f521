"""Figure rendering for sweep, evaluation, and training reports.

Every report path writes plot files next to its CSV output, so a run
leaves both machine-readable tables and ready-to-look-at figures.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .datasets import skin_type_to_roman  # noqa: E402

_METHOD_COLORS = {"pos": "tab:blue", "chrom": "tab:orange", "ica": "tab:green",
                  "can": "tab:red", "can_static": "tab:purple",
                  "can_augmented": "tab:red"}


def _color(method: str):
    return _METHOD_COLORS.get(method, "tab:gray")


def sweep_figures(rows, out_dir) -> list[Path]:
    """Render SNR/MAE against motion velocity and skin type."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    methods = sorted({r.method for r in rows})
    velocities = sorted({r.motion_deg_s for r in rows})
    skins = sorted({r.skin_type for r in rows})

    def cell_mean(method, attr, velocity=None, skin=None):
        vals = [getattr(r, attr) for r in rows
                if r.method == method
                and (velocity is None or r.motion_deg_s == velocity)
                and (skin is None or r.skin_type == skin)
                and getattr(r, attr) is not None]
        return sum(vals) / len(vals) if vals else None

    if len(velocities) > 1:
        for attr, label, name in (("snr_db", "mean BVP SNR (dB)", "snr_vs_motion"),
                                  ("mae", "mean HR MAE (BPM)", "mae_vs_motion")):
            fig, ax = plt.subplots(figsize=(5, 3.2))
            for m in methods:
                ys = [cell_mean(m, attr, velocity=v) for v in velocities]
                if all(y is None for y in ys):
                    continue
                ax.plot(velocities, ys, marker="o", label=m, color=_color(m))
            ax.set_xlabel("head angular velocity (deg/s)")
            ax.set_ylabel(label)
            ax.legend(fontsize=8)
            fig.tight_layout()
            p = out_dir / f"{name}.png"
            fig.savefig(p, dpi=150)
            plt.close(fig)
            paths.append(p)

    if len(skins) > 1:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for m in methods:
            ys = [cell_mean(m, "snr_db", skin=s) for s in skins]
            if all(y is None for y in ys):
                continue
            ax.plot(range(len(skins)), ys, marker="s", label=m, color=_color(m))
        ax.set_xticks(range(len(skins)))
        ax.set_xticklabels([skin_type_to_roman(s) for s in skins])
        ax.set_xlabel("Fitzpatrick skin type")
        ax.set_ylabel("mean BVP SNR (dB)")
        ax.legend(fontsize=8)
        fig.tight_layout()
        p = out_dir / "snr_vs_skin_type.png"
        fig.savefig(p, dpi=150)
        plt.close(fig)
        paths.append(p)
    return paths


def hr_scatter_figure(estimated_hr, reference_hr, out_path) -> Path:
    """Estimated-vs-reference heart-rate scatter with the identity line."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(3.6, 3.6))
    lo = min(min(reference_hr), min(estimated_hr)) - 5
    hi = max(max(reference_hr), max(estimated_hr)) + 5
    ax.plot([lo, hi], [lo, hi], color="0.7", lw=1)
    ax.scatter(reference_hr, estimated_hr, s=14, color="tab:blue", alpha=0.8)
    ax.set_xlabel("reference HR (BPM)")
    ax.set_ylabel("estimated HR (BPM)")
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def training_figure(report, out_path) -> Path:
    """Training and validation MSE curves with the selected epoch marked."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = range(len(report.train_mse))
    ax.plot(epochs, report.train_mse, label="train MSE", color="tab:blue")
    ax.plot(epochs, report.val_mse, label="validation MSE", color="tab:orange")
    ax.axvline(report.selected_epoch, color="0.6", ls="--", lw=1,
               label=f"selected epoch {report.selected_epoch}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
