"""Figure rendering for the CLI report paths.

Every plot lands next to its CSV so a run directory is self-contained:
solution profiles at y ~ 0, convergence ladders with a first-order guide,
error-versus-jump sweeps, node-fraction tables, and solver benchmarks.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams["figure.figsize"] = (5.0, 3.6)
plt.rcParams["figure.dpi"] = 130
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3
plt.rcParams["font.size"] = 9


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def solution_profile(path, x, u_h, u_exact, title="") -> None:
    """Numerical vs analytical profile along the y ~ 0 band."""
    order = x.argsort()
    fig, ax = plt.subplots()
    ax.plot(x[order], u_exact[order], "-", lw=1.2, label="analytical")
    ax.plot(x[order], u_h[order], ".", ms=3.5, label="numerical")
    ax.set_xlabel("x")
    ax.set_ylabel("u")
    if title:
        ax.set_title(title)
    ax.legend()
    _save(fig, path)


def convergence(path, curves, title="") -> None:
    """log-log error over h for one or more labelled ladders."""
    fig, ax = plt.subplots()
    hs = []
    for label, h, err in curves:
        ax.loglog(h, err, "o-", ms=4, label=label)
        hs.extend(h)
    if hs:
        h0, e0 = max(hs), None
        for label, h, err in curves:
            if len(err) and max(h) == h0:
                e0 = err[list(h).index(h0)]
                break
        if e0 is not None and e0 > 0:
            guide = [e0 * (hh / h0) for hh in sorted(set(hs))]
            ax.loglog(sorted(set(hs)), guide, "k--", lw=0.8,
                      label="first order")
    ax.set_xlabel("h")
    ax.set_ylabel("relative L2 error")
    if title:
        ax.set_title(title)
    ax.legend()
    _save(fig, path)


def error_over_jump(path, jumps, errors, label="", title="") -> None:
    fig, ax = plt.subplots()
    ax.loglog(jumps, errors, "o-", ms=4, label=label or None)
    ax.set_xlabel("jump magnitude")
    ax.set_ylabel("relative L2 error")
    if title:
        ax.set_title(title)
    if label:
        ax.legend()
    _save(fig, path)


def flux_profile(path, x, delta_q, title="") -> None:
    order = x.argsort()
    fig, ax = plt.subplots()
    ax.plot(x[order], delta_q[order], ".", ms=3.5)
    ax.set_xlabel("x")
    ax.set_ylabel("flux error")
    if title:
        ax.set_title(title)
    _save(fig, path)


def fractions(path, jumps, rows_by_h, title="") -> None:
    """Node fractions over the jump magnitude, one line style per h."""
    fig, ax = plt.subplots()
    for h, fr in rows_by_h.items():
        ax.semilogx(jumps, [f.sigma0_of_interior for f in fr], "o-", ms=4,
                    label=f"sigma0/interior, h={h:g}")
        ax.semilogx(jumps, [f.conservative_of_interior for f in fr], "s--",
                    ms=4, label=f"conservative/interior, h={h:g}")
    ax.set_xlabel("jump magnitude")
    ax.set_ylabel("node fraction [%]")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7)
    _save(fig, path)


def bench(path, h_values, iters_by_method, title="") -> None:
    fig, ax = plt.subplots()
    for method, iters in iters_by_method.items():
        ax.semilogx(h_values, iters, "o-", ms=4, label=method)
    ax.invert_xaxis()
    ax.set_xlabel("h")
    ax.set_ylabel("solver iterations")
    if title:
        ax.set_title(title)
    ax.legend()
    _save(fig, path)
