from dataclasses import dataclass
from typing import Optional
import numpy as np
import pandas as pd
import matplotlib.pyplot as plt
import matplotlib as mpl
from matplotlib.backends.backend_pdf import PdfPages
from scipy.stats import invgauss


@dataclass
class Line:
    y: np.ndarray
    y_err: Optional[np.ndarray] = None
    label: Optional[str] = None
    color: Optional[str] = None
    linestyle: str = "solid"
    fill: bool = False


class Plots:
    """
    Diagnostic plots of a run: stopping-time histograms of the entropy accumulation,
    running CHSH traces and the scaling of the proof benchmark.
    """

    def __init__(self, usetex: bool = False):
        """
        Args:
            usetex: Render labels with LaTeX, needs a TeX installation
        """
        self.colors = [f"C{i}" for i in range(10)]
        plt.rc("font", family="serif", size=16)
        plt.rc("axes", titlesize="medium")
        plt.rc("text", usetex=usetex)
        if usetex:
            plt.rc("text.latex", preamble=r"\usepackage{amsmath}")

    def plot_stopping_times(
        self,
        file: str,
        counts: np.ndarray,
        drift: float,
        variance: float,
        target: float,
        max_trials: int,
        bins: int = 40,
    ):
        """
        Histogram of simulated stopping counts with the first-passage approximation of
        a random walk with the given drift and variance overlaid.
        Args:
            file: Output file name
            counts: Stopping counts, -1 for exhausted runs
            drift: Mean increment per trial in bits
            variance: Increment variance per trial
            target: Threshold the walk has to cross
            max_trials: Trial limit, drawn as a vertical line
            bins: Number of bins
        """
        done = counts[counts > 0].astype(np.float64)
        with PdfPages(file) as pp:
            fig, ax = plt.subplots(figsize=(4, 3.5))
            if len(done) > 0:
                lo, hi = done.min(), max(done.max(), target / drift * 1.05)
                edges = np.linspace(lo * 0.95, hi, bins + 1)
                y, _ = np.histogram(done, bins=edges, density=True)
                self.hist_line(ax, edges, Line(y, label="simulation", color=self.colors[0]))
                mean = target / drift
                shape = target**2 / variance
                x = 0.5 * (edges[1:] + edges[:-1])
                ax.plot(
                    x,
                    invgauss.pdf(x, mean / shape, scale=shape),
                    color=self.colors[1],
                    label="first passage",
                )
            ax.axvline(max_trials, color="k", linestyle="dashed", linewidth=1.0)
            ax.set_xlabel("trials until success")
            ax.set_ylabel("density")
            ax.ticklabel_format(axis="both", style="sci", scilimits=(0, 0))
            self.corner_text(
                ax, f"{len(done)}/{len(counts)} succeeded", "left", "top"
            )
            ax.legend(loc="center right", frameon=False, fontsize="small")
            plt.savefig(pp, format="pdf", bbox_inches="tight")
            plt.close()

    def plot_chsh_trace(self, file: str, running_s: np.ndarray, expected: Optional[float] = None):
        """
        Running CHSH value over the trials of a run.
        Args:
            file: Output file name
            running_s: Running value after every trial
            expected: Value implied by the behaviour model
        """
        step = max(1, len(running_s) // 2000)
        n = np.arange(1, len(running_s) + 1)[::step]
        with PdfPages(file) as pp:
            fig, ax = plt.subplots(figsize=(4, 3.5))
            ax.plot(n, running_s[::step], color=self.colors[0], linewidth=1.0)
            ax.axhline(2.0, color="k", linestyle="dashed", linewidth=1.0)
            if expected is not None:
                ax.axhline(expected, color=self.colors[1], linewidth=1.0)
            ax.set_xscale("log")
            ax.set_xlabel("trials")
            ax.set_ylabel("running CHSH value")
            lo = max(1.9, np.nanmin(running_s[len(running_s) // 100 :]) - 0.01)
            ax.set_ylim(lo, min(2.2, np.nanmax(running_s[len(running_s) // 100 :]) + 0.01))
            plt.savefig(pp, format="pdf", bbox_inches="tight")
            plt.close()

    def plot_bench(self, file: str, df: pd.DataFrame):
        """
        Log-log plots of the benchmark columns against the vertex count, one page per
        column, with the fitted power-law slope.
        Args:
            file: Output file name
            df: Benchmark table with a column V
        """
        with PdfPages(file) as pp:
            for column, ylabel in (
                ("commit_s", "commit time [s]"),
                ("response_s", "response time [s]"),
                ("verify_s", "verify time [s]"),
                ("proof_MB", "proof size [MB]"),
                ("rounds", "rounds"),
            ):
                fig, ax = plt.subplots(figsize=(4, 3.5))
                v, y = df["V"].to_numpy(float), df[column].to_numpy(float)
                ax.plot(v, y, "o", color=self.colors[0])
                slope, intercept = fit_power_law(v, y)
                if np.isfinite(slope):
                    ax.plot(v, np.exp(intercept) * v**slope, color=self.colors[1], linewidth=1.0)
                    self.corner_text(ax, f"slope {slope:.2f}", "left", "top")
                ax.set_xscale("log")
                ax.set_yscale("log")
                ax.set_xlabel("vertices")
                ax.set_ylabel(ylabel)
                plt.savefig(pp, format="pdf", bbox_inches="tight")
                plt.close()

    def hist_line(self, ax: mpl.axes.Axes, bins: np.ndarray, line: Line):
        """
        Plot a stepped line for a histogram, optionally with an error band.
        Args:
            ax: Matplotlib Axes
            bins: Numpy array with bin boundaries
            line: Values, errors and style of the line
        """

        dup_last = lambda a: np.append(a, a[-1])

        if line.fill:
            ax.fill_between(
                bins, dup_last(line.y), label=line.label, facecolor=line.color, step="post", alpha=0.2
            )
        else:
            ax.step(
                bins,
                dup_last(line.y),
                label=line.label,
                color=line.color,
                linewidth=1.0,
                where="post",
                ls=line.linestyle,
            )
        if line.y_err is not None:
            ax.fill_between(
                bins,
                dup_last(line.y - line.y_err),
                dup_last(line.y + line.y_err),
                facecolor=line.color,
                alpha=0.3,
                step="post",
            )

    def corner_text(
        self, ax: mpl.axes.Axes, text: str, horizontal_pos: str, vertical_pos: str
    ):
        ax.text(
            x=0.95 if horizontal_pos == "right" else 0.05,
            y=0.95 if vertical_pos == "top" else 0.05,
            s=text,
            horizontalalignment=horizontal_pos,
            verticalalignment=vertical_pos,
            transform=ax.transAxes,
        )


def fit_power_law(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """
    Least-squares line through log y against log x over the points where both are
    positive. Returns slope and intercept, both nan with fewer than two such points.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return float("nan"), float("nan")
    slope, intercept = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope), float(intercept)


def fit_slope(x: np.ndarray, y: np.ndarray) -> float:
    return fit_power_law(x, y)[0]
