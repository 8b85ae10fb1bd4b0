# sim_visuals.py
import os
from pathlib import Path
from typing import List

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from config import PLOT_DIR


# ====================================================================
# I. DATA
# ====================================================================
def load_log(csv_path) -> pd.DataFrame:
    df = pd.read_csv(csv_path)
    missing = {"t", "e_rcm_mm", "e_vis_u", "e_vis_v", "e_vis_px", "target_id", "solve_us"} - set(df.columns)
    if missing:
        raise ValueError(f"{csv_path}: not a simulator log, missing columns {sorted(missing)}")
    return df


def switch_times(df: pd.DataFrame) -> List[float]:
    """Times where the active target changes."""
    changed = df["target_id"].to_numpy()
    idx = np.flatnonzero(changed[1:] != changed[:-1]) + 1
    return df["t"].to_numpy()[idx].tolist()


def _mark_switches(ax, df: pd.DataFrame) -> None:
    for ts in switch_times(df):
        ax.axvline(ts, color="grey", linestyle=":", linewidth=1)


# ====================================================================
# II. VISUALIZATION FUNCTIONS
# ====================================================================
def plot_rcm_error(df: pd.DataFrame, out_dir: str, prefix: str) -> str:
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.plot(df["t"], df["e_rcm_mm"], color="tab:red", linewidth=1)
    _mark_switches(ax, df)
    ax.set_title("RCM error", fontsize=14)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("distance shaft - trocar [mm]")
    fig.tight_layout()

    filepath = os.path.join(out_dir, f"{prefix}_rcm_error.png")
    fig.savefig(filepath)
    plt.close(fig)
    return filepath


def plot_visual_error(df: pd.DataFrame, out_dir: str, prefix: str, threshold: float = 10.0) -> str:
    """Pixel error norm with the switching threshold; one color per active target."""
    fig, ax = plt.subplots(figsize=(10, 4))
    for target_id, part in df.groupby("target_id", sort=False):
        ax.plot(part["t"], part["e_vis_px"], linewidth=1, label=f"target {target_id}")
    ax.axhline(threshold, color="black", linestyle="--", linewidth=1, label="switch threshold")
    ax.set_title("Visual error", fontsize=14)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("pixel error [px]")
    ax.legend(loc="upper right")
    fig.tight_layout()

    filepath = os.path.join(out_dir, f"{prefix}_visual_error.png")
    fig.savefig(filepath)
    plt.close(fig)
    return filepath


def plot_pixel_axes(df: pd.DataFrame, out_dir: str, prefix: str) -> str:
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.plot(df["t"], df["e_vis_u"], linewidth=1, label="u - c_u")
    ax.plot(df["t"], df["e_vis_v"], linewidth=1, label="v - c_v")
    _mark_switches(ax, df)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("centered pixel [px]")
    ax.legend(loc="upper right")
    fig.tight_layout()

    filepath = os.path.join(out_dir, f"{prefix}_pixel_axes.png")
    fig.savefig(filepath)
    plt.close(fig)
    return filepath


def plot_solve_time(df: pd.DataFrame, out_dir: str, prefix: str) -> str:
    solve = df["solve_us"].to_numpy()
    fig, ax = plt.subplots(figsize=(8, 4))
    if np.any(solve > 0):
        ax.hist(solve[solve > 0], bins=60, color="skyblue", edgecolor="black")
        ax.axvline(float(np.mean(solve)), color="red", linestyle="--", label=f"mean {np.mean(solve):.0f} us")
        ax.legend()
    else:
        ax.text(0.5, 0.5, "timing not recorded", ha="center", va="center", transform=ax.transAxes)
    ax.set_title("HQP solve time per cycle", fontsize=14)
    ax.set_xlabel("solve time [us]")
    ax.set_ylabel("cycles")
    fig.tight_layout()

    filepath = os.path.join(out_dir, f"{prefix}_solve_time.png")
    fig.savefig(filepath)
    plt.close(fig)
    return filepath


# ====================================================================
# III. ENTRY
# ====================================================================
def generate_run_plots(csv_path, out_dir: str = PLOT_DIR, threshold: float = 10.0) -> List[str]:
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    df = load_log(csv_path)
    prefix = Path(csv_path).stem
    return [
        plot_rcm_error(df, out_dir, prefix),
        plot_visual_error(df, out_dir, prefix, threshold),
        plot_pixel_axes(df, out_dir, prefix),
        plot_solve_time(df, out_dir, prefix),
    ]
