"""Figures for the report command. Headless: always renders with the Agg backend."""
import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    # keeps PNG bytes stable between runs
    "svg.hashsalt": "effgram",
}


def figure_size(scale=1.0, ratio=0.62):
    width = 6.0 * scale
    return width, width * ratio


def _png_bytes(fig):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()


def loss_difference_figure(factors_table, gap=None, title=None):
    """Measured loss difference against its two reconstructions (and the gap when known)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figure_size())
        t = factors_table["time"]
        base = factors_table["delta_bar"][0]
        ax.plot(t, factors_table["delta_bar"] - base, color="k", lw=1.6, label=r"measured $\bar\Delta$")
        ax.plot(t, factors_table["delta_c_eps"], ls="--", label=r"$\bar\Delta(c,\epsilon)$")
        ax.plot(t, factors_table["delta_c_eps_hat"], ls=":", lw=1.8, label=r"$\bar\Delta(c,\hat\epsilon)$")
        if gap is not None:
            ax.plot(gap[0], gap[1], color="0.5", lw=1.0, label="test minus train loss")
        ax.set_xlabel("time")
        ax.set_ylabel("loss difference")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _png_bytes(fig)


def factor_figure(factors_table):
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=figure_size(1.2, 0.4))
        t = factors_table["time"]
        live = factors_table["masked"] == 0
        a1.plot(t[live], factors_table["c_bar"][live], lw=1.0)
        a1.axhline(0.0, color="0.6", lw=0.6)
        a1.set_xlabel("time")
        a1.set_ylabel(r"$\bar c$")
        a2.semilogy(t, np.maximum(factors_table["eps_bar"], 1e-300), label=r"$\bar\epsilon$")
        a2.semilogy(t, np.maximum(factors_table["eps_hat"], 1e-300), ls=":", label=r"$\hat\epsilon$")
        a2.set_xlabel("time")
        a2.legend(frameon=False)
        fig.tight_layout()
        return _png_bytes(fig)


def explained_magnitude_figure(runs):
    """``runs`` maps a label to a spectrum table (dict of columns, eigenvalues ascending)."""
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=figure_size(1.2, 0.4))
        for label, spec in runs.items():
            x = spec["relative_index"]
            line, = a1.plot(x, spec["explained_residual"], label=f"{label}: residual")
            a1.plot(x, spec["explained_kernel"], ls="--", color=line.get_color(),
                    label=f"{label}: kernel")
            a2.semilogy(x, np.maximum(spec["sigma"], 1e-300), color=line.get_color(), label=label)
        a1.set_xlabel("relative index (small eigenvalues first)")
        a1.set_ylabel("explained magnitude")
        a1.legend(frameon=False)
        a2.set_xlabel("relative index")
        a2.set_ylabel(r"$\sigma(K)$")
        fig.tight_layout()
        return _png_bytes(fig)
