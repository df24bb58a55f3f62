"""Static SVG renderings of experiment tables. The CSVs are the contract;
these are a convenience view of mean +- std across seeds."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamp keep reruns byte-identical
matplotlib.rcParams["svg.hashsalt"] = "d2doffload"
_META = {"Date": None, "Creator": None}

_XLABEL = {"n_users": "number of users N", "tau_avg": "tau_avg", "lam_avg": "lambda_avg",
           "max_contacts": "max contacts M"}


def _curve_label(row) -> str:
    if row["algorithm"] == "network-formation":
        return f"network formation, v_c/v_d={row['cost_ratio']:g}"
    if row["algorithm"] == "random-seeding":
        return f"random seeding, {row['n_seeds']} seeds"
    return "random seeding envelope"


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def plot_efficiency(result, out: Path) -> Path:
    spec = result.spec
    curves: dict[str, list] = {}
    for row in result.summary:
        curves.setdefault(_curve_label(row), []).append(row)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rows in curves.items():
        x = [r["sweep_value"] for r in rows]
        y = [r["cellular_mean"] for r in rows]
        e = [r["cellular_std"] for r in rows]
        style = "--" if label.startswith("random seeding,") else "-"
        ax.errorbar(x, y, yerr=e, fmt=style, marker="o", capsize=3, label=label,
                    alpha=0.5 if style == "--" else 1.0)
    ax.set_xlabel(_XLABEL.get(spec.sweep_param, spec.sweep_param or ""))
    ax.set_ylabel("cellular traffic fraction")
    ax.legend(fontsize=7)
    return _save(fig, out / f"{spec.kind}.svg")


def plot_convergence(result, out: Path) -> list[Path]:
    spec = result.spec
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
    for cell in result.cells:
        if cell.seed != spec.seeds[0]:
            continue
        for row, run in cell.runs:
            if row["algorithm"] != "network-formation":
                continue
            p = [rec.period for rec in run.periods]
            lab = f"N={cell.value}, v_c/v_d={row['cost_ratio']:g}"
            a1.plot(p, [rec.n_edges for rec in run.periods], label=lab)
            a2.plot(p, [rec.cellular_fraction for rec in run.periods], label=lab)
    a1.set_xlabel("period")
    a1.set_ylabel("links")
    a2.set_xlabel("period")
    a2.set_ylabel("cellular traffic fraction")
    a1.legend(fontsize=7)
    paths = [_save(fig, out / f"{spec.kind}.svg")]
    hist = result.tables.get("convergence_histogram", [])
    fig, ax = plt.subplots(figsize=(6, 4))
    groups: dict[str, list] = {}
    for r in hist:
        groups.setdefault(f"N={r['sweep_value']}, v_c/v_d={r['cost_ratio']:g}", []).append(r)
    for label, rows in groups.items():
        finite = [r for r in rows if r["bin_hi"] != float("inf")]
        ax.step([r["bin_lo"] for r in finite], [r["probability"] for r in finite], where="post", label=label)
    ax.set_xlabel("convergence period")
    ax.set_ylabel("probability")
    ax.legend(fontsize=7)
    paths.append(_save(fig, out / f"{spec.kind}_histogram.svg"))
    return paths


def plot_payoffs(result, out: Path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, alg, title in zip(axes, ("random-seeding-envelope", "network-formation"),
                              ("random seeding", "network formation")):
        vals = [float(v) for cell in result.cells for row, run in cell.runs
                if row["algorithm"] == alg for v in run.user_mean_payoff]
        ax.hist(vals, bins=30)
        ax.set_title(title)
        ax.set_xlabel("mean payoff per round")
    axes[0].set_ylabel("users")
    return _save(fig, out / f"{result.spec.kind}.svg")


def plot_experiment(result, out_dir) -> list[Path]:
    out = Path(out_dir)
    kind = result.spec.kind
    if kind == "convergence":
        return plot_convergence(result, out)
    if kind == "payoff-distribution":
        return [plot_payoffs(result, out)]
    if kind.startswith("efficiency"):
        return [plot_efficiency(result, out)]
    return []
