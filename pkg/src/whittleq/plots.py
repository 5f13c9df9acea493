"""Figure reproduction from a finished run directory.

All plots are rendered from summary.json alone, so a run directory can be
shipped without its raw CSVs and still plot. SVG output is byte-for-byte
deterministic: the SVG id hash salt is pinned and the date metadata is
stripped.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import MissingDataError  # noqa: E402

SVG_HASHSALT = "whittleq"
ALGORITHM_COLORS = {"tabular": "tab:blue", "linear": "tab:green",
                    "neural": "tab:red"}


def _det_rc() -> dict:
    return {"svg.hashsalt": SVG_HASHSALT, "svg.fonttype": "path",
            "figure.max_open_warning": 0}


def _save(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _load_summary(run_dir: Path) -> dict:
    path = run_dir / "summary.json"
    if not path.exists():
        raise MissingDataError(f"missing input file: {path}")
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)


def _require(summary: dict, key: str, path: Path) -> dict:
    if key not in summary:
        raise MissingDataError(
            f"summary block {key!r} absent from {path}; rerun the "
            f"experiment with diagnostics enabled")
    return summary[key]


def _convergence_figure(state: str, per_alg: dict, lam_star: float):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for algorithm in sorted(per_alg):
        block = per_alg[algorithm]
        ks = block["k"]
        mean = block["lam_mean"]
        color = ALGORITHM_COLORS.get(algorithm, "tab:gray")
        ax.plot(ks, mean, label=algorithm, color=color)
        # The endpoint label is machine-checked against summary.json, so it
        # carries the full repr rather than a rounded pretty-print.
        ax.annotate(repr(float(block["final_mean"])),
                    xy=(ks[-1], mean[-1]), xytext=(3, 0),
                    textcoords="offset points", fontsize=7, color=color)
    ax.axhline(lam_star, color="black", linestyle="--", linewidth=1.0,
               label="exact index")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("subsidy estimate")
    ax.set_title(f"state {state}: learned index vs iteration")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def _lyapunov_figure(block: dict):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.loglog(block["k"], block["e_m"], label="E[M]", color="tab:red")
    ax.loglog(block["k"], block["e_m_hat"], label="E[M-hat]",
              color="tab:blue", linestyle=":")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("trial-averaged Lyapunov value")
    ax.set_title(f"state {block['state']}: Lyapunov decay "
                 f"({len(block['trials'])} trials)")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def _c0_figure(block: dict):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    widths = block["widths"]
    means = block["mean"]
    pairs = [(m, v) for m, v in zip(widths, means) if v is not None]
    for m in widths:
        per_seed = [v for v in block["per_seed"][str(m)] if v is not None]
        ax.plot([m] * len(per_seed), per_seed, linestyle="none",
                marker=".", color="tab:gray", markersize=4)
    if pairs:
        ax.plot([p[0] for p in pairs], [p[1] for p in pairs],
                marker="o", color="tab:red", label="seed mean")
        ax.legend(loc="best", fontsize=8)
    ax.set_xlabel("hidden-layer width m")
    ax.set_ylabel("c0 estimate")
    ax.set_title("linearization mismatch constant vs width")
    fig.tight_layout()
    return fig


def emit_plots(run_dir, out_dir=None) -> list[Path]:
    """Render the figure bundle for a finished run.

    Returns the written paths: one convergence SVG per target state, one
    Lyapunov decay SVG, one c0-vs-width SVG. All inputs are validated
    before the first file is written, so a failure leaves no partial set.
    """
    run_dir = Path(run_dir)
    out_dir = run_dir / "plots" if out_dir is None else Path(out_dir)
    summary_path = run_dir / "summary.json"
    summary = _load_summary(run_dir)

    convergence = _require(summary, "convergence", summary_path)
    oracle = _require(summary, "oracle", summary_path)
    states = sorted({s for per_alg in convergence.values() for s in per_alg},
                    key=int)
    if not states or all(not per_alg for per_alg in convergence.values()):
        raise MissingDataError(
            f"no trial statistics in {summary_path}; nothing to plot")
    for state in states:
        if state not in oracle:
            raise MissingDataError(
                f"oracle entry for state {state} absent from {summary_path}")
    lyap = _require(summary, "lyapunov", summary_path)
    if "e_m" not in lyap:
        raise MissingDataError(
            f"lyapunov block in {summary_path} has no E[M] curve "
            f"(all trials aborted?)")
    c0 = _require(summary, "c0", summary_path)
    if "mean" not in c0:
        raise MissingDataError(
            f"c0 block in {summary_path} has no estimates "
            f"(reference runs aborted?)")

    written = []
    with plt.rc_context(_det_rc()):
        for state in states:
            per_alg = {alg: blocks[state]
                       for alg, blocks in convergence.items()
                       if state in blocks}
            fig = _convergence_figure(state, per_alg, float(oracle[state]))
            path = out_dir / f"state{state}_convergence.svg"
            _save(fig, path)
            written.append(path)
        path = out_dir / "lyapunov.svg"
        _save(_lyapunov_figure(lyap), path)
        written.append(path)
        path = out_dir / "c0.svg"
        _save(_c0_figure(c0), path)
        written.append(path)
    return written
