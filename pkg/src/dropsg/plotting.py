"""Matplotlib figure rendering for the report and CLI plot paths.

Figures are written next to the delimited outputs. The Agg backend is forced
so headless runs work, and SVG output strips the creation date so repeated
runs stay byte-comparable.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_figure(fig, path) -> None:
    path = str(path)
    kwargs = {"dpi": 150, "bbox_inches": "tight"}
    if path.endswith(".svg"):
        kwargs["metadata"] = {"Date": None}
    fig.savefig(path, **kwargs)
    plt.close(fig)


def trajectory_figure(result, title=None):
    """Branch paths and separation vs time, with the analytic envelope."""
    t_ms = result.times * 1e3
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.plot(t_ms, result.x_a * 1e9, label="branch A", lw=0.8)
    ax1.plot(t_ms, result.x_b * 1e9, label="branch B", lw=0.8)
    ax1.plot(t_ms, result.common_mode * 1e9, label="common mode", lw=0.8, ls="--")
    ax1.set_ylabel("x (nm)")
    ax1.legend(loc="upper right", fontsize=8)
    ax1.grid(alpha=0.3)
    if title:
        ax1.set_title(title)

    omega = result.omega
    period = 2.0 * np.pi / omega
    dx_eq = np.max(np.abs(result.separation)) / 2.0
    t = result.times
    envelope = np.where(t <= period,
                        dx_eq * (1.0 - np.cos(omega * t)),
                        dx_eq * (1.0 - np.cos(omega * (t - period))))
    ax2.plot(t_ms, np.abs(result.separation) * 1e9, label="|Δx| simulated", lw=0.8)
    ax2.plot(t_ms, envelope * 1e9, label="|Δx| analytic", lw=0.8, ls=":")
    ax2.set_xlabel("t (ms)")
    ax2.set_ylabel("|Δx| (nm)")
    ax2.legend(loc="upper right", fontsize=8)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def fringe_figure(fringe):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(fringe.phis * 1e6, fringe.p_a, lw=1.0)
    ax.set_xlabel("tilt φ (µrad)")
    ax.set_ylabel("P_A")
    ax.set_ylim(-0.05, 1.05)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def sensitivity_figure(values, residuals, xlabel, ylabel="recombination |Δx| (m)",
                       logx=False, logy=False):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(values, residuals, marker="o", lw=1.0)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    return fig


def sweep_figure(values, maxima, param):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(values, np.asarray(maxima) * 1e9, marker="o", lw=1.0)
    ax.set_xlabel(param)
    ax.set_ylabel("max |Δx| (nm)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig
