"""Top-down schematic snapshots of a simulation state (headless PNG)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle

from .sim import Metric, SimEnvironment

_PALETTE = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple",
            "tab:brown", "tab:pink", "tab:olive", "tab:cyan")


def render_state(env: SimEnvironment, out_path: Path | str) -> Path:
    """Draw the workspace from above: objects, fixtures, goal targets."""
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)

    (x0, y0, _), (x1, y1, _) = env.bounds.min_corner, env.bounds.max_corner
    fig, ax = plt.subplots(figsize=(6, 6 * (y1 - y0) / (x1 - x0) if x1 > x0 else 6))
    ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, edgecolor="black", linewidth=1.5))

    color_i = 0
    for rec in env.objects.values():
        w, h = rec.size[0], rec.size[1]
        if rec.fixed:
            face, edge = "0.8", "0.4"
        else:
            face, edge = _PALETTE[color_i % len(_PALETTE)], "black"
            color_i += 1
        ax.add_patch(
            Rectangle(
                (rec.pose.x - w / 2, rec.pose.y - h / 2), w, h,
                facecolor=face, edgecolor=edge, alpha=0.8,
            )
        )
        ax.annotate(rec.object_id, (rec.pose.x, rec.pose.y),
                    ha="center", va="center", fontsize=7)

    for goal in env.goals:
        for i, target in enumerate(goal.target_poses):
            if goal.metric == Metric.ZONE:
                w, h = goal.zone_size[0], goal.zone_size[1]
                ax.add_patch(
                    Rectangle(
                        (target.x - w / 2, target.y - h / 2), w, h,
                        fill=False, edgecolor="red", linestyle="--", linewidth=1.0,
                    )
                )
            else:
                marker = "x" if goal.matched[i] else "+"
                ax.plot(target.x, target.y, marker, color="red", markersize=8)

    ax.set_xlim(x0 - 0.05, x1 + 0.05)
    ax.set_ylim(y0 - 0.05, y1 + 0.05)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(
        f"reward {env.accumulated_reward:.3f}  step {env.step_count}/{env.max_steps}"
    )
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
