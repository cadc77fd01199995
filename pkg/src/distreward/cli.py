"""Command-line experiment orchestration.

Subcommands: gen-data, train-distance, eval-distance, train-policy,
speedup-report, replay-rewards. Every command is deterministic given its
config, and every artifact carries the config checksum for provenance.

Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import os
import sys

import click
import numpy as np

from . import config as cfgmod
from . import demos, distances, metrics, nn, rewards, rl, world

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


# --- plumbing ----------------------------------------------------------------

def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Map domain exceptions to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except cfgmod.ConfigError as exc:
            _fail(EXIT_CONFIG, exc)
        except (demos.DatasetError, FileNotFoundError) as exc:
            _fail(EXIT_DATA, exc)
        except (distances.TrainingDivergedError, nn.NonFiniteError) as exc:
            _fail(EXIT_DIVERGED, exc)
        except (ValueError, nn.ShapeError) as exc:
            _fail(EXIT_DATA, exc)

    return wrapper


def _load_config(path):
    """A config is a JSON file path or the name of a shipped recipe."""
    if path in cfgmod.RECIPES:
        return cfgmod.validate(cfgmod.RECIPES[path])
    if not os.path.exists(path):
        raise cfgmod.ConfigError(f"no such config file or recipe: {path}")
    return cfgmod.load(path)


def _file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, command, cfg, extra=None, outputs=()):
    manifest = {
        "command": command,
        "config_sha256": cfgmod.checksum(cfg),
        "config": cfg,
        "outputs": {name: _file_sha256(os.path.join(out_dir, name))
                    for name in outputs},
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_csv(path, checksum, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_sha256={checksum}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path):
    """Rows of a CSV written by _write_csv; comment lines are skipped."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise demos.DatasetError(f"empty CSV: {path}")
    return rows[0], rows[1:]


def _task_for(cfg):
    return world.TASKS[cfg["task"]]()


def _embodiment_for(name):
    return world.EMBODIMENTS[name]


# --- goal chains and reward specs ---------------------------------------------

def _goal_chain(task, embodiment, use_subgoals):
    chain = []
    if use_subgoals and task.subgoal_state is not None:
        chain.append(world.render(task.subgoal_state, embodiment))
    chain.append(world.render(task.goal_state, embodiment))
    return chain


def _reset_observations(task, embodiment, seed, count=20):
    rng = np.random.default_rng(seed)
    return [world.render(world.reset(task, embodiment,
                                     int(rng.integers(2**31 - 1))), embodiment)
            for _ in range(count)]


def _build_reward_spec(cfg, model, task, embodiment):
    """RewardSpec from config; T / switch threshold calibrated when 'auto'.

    Calibration needs a distance model; with none (sparse/oracle runs) the
    fixed fallbacks are used since the values are never read.
    """
    rcfg = cfg["reward"]
    chain = _goal_chain(task, embodiment, rcfg["use_subgoals"])
    final_goal = chain[-1]
    resets = None
    if model is not None and (rcfg["T"] == "auto"
                              or rcfg["switch_threshold"] == "auto"):
        resets = _reset_observations(task, embodiment, seed=20_000 + len(chain))
    if rcfg["T"] == "auto":
        T = (rewards.calibrate_T(model, resets, final_goal)
             if model is not None else 45.0)
    else:
        T = rewards.calibrate_T(None, [], None, mode="fixed", fixed=rcfg["T"])
    if rcfg["switch_threshold"] == "auto":
        thr = (rewards.calibrate_switch_threshold(model, resets, final_goal)
               if model is not None else 1.0)
    else:
        thr = float(rcfg["switch_threshold"])
    return rewards.RewardSpec(form=rcfg["form"], T=T,
                              mix_sparse=rcfg["mix_sparse"], goal_chain=chain,
                              switch_threshold=thr,
                              switch_streak=rcfg["switch_streak"])


def _train_run_config(cfg, mode):
    r = cfg["rl"]
    return rl.TrainRunConfig(
        reward_mode=mode, max_env_steps=r["max_env_steps"],
        eval_every=r["eval_every"], eval_episodes=r["eval_episodes"],
        initial_exploration_steps=r["initial_exploration_steps"],
        lr=r["lr"], batch=r["batch"],
        grad_steps_per_env_step=r["grad_steps_per_env_step"],
        gamma=r["gamma"], replay_capacity=r["replay_capacity"],
        target_refresh=r["target_refresh"], target_tau=r["target_tau"],
        n_step=r["n_step"],
        hidden=r["hidden"], epsilon_final=r["epsilon_final"],
        epsilon_decay_frac=r["epsilon_decay_frac"], td_clip=r["td_clip"],
        lr_final=r["lr_final"])


# --- CLI ----------------------------------------------------------------------

@click.group()
def main():
    """Goal-conditioned distance rewards: data, models, policies, reports."""


def _common_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      help="JSON config file or shipped recipe name")(fn)
    fn = click.option("--out", "out_dir", required=True,
                      type=click.Path(file_okay=False))(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="override the config seed(s)")(fn)
    return fn


@main.command("gen-data")
@_common_options
@_guarded
def gen_data(config_path, out_dir, seed):
    """Generate a demonstration video dataset."""
    cfg = _load_config(config_path)
    os.makedirs(out_dir, exist_ok=True)
    d = cfg["demos"]
    if seed is not None:
        d = dict(d, seed=seed)
    task = _task_for(cfg)
    data = demos.generate_demos(
        task, _embodiment_for(d["embodiment"]), d["count"], d["seed"],
        noise=d["noise"], speed_range=(d["speed_min"], d["speed_max"]),
        max_idle_tail=d["max_idle_tail"])
    path = os.path.join(out_dir, "demos.bin")
    demos.save_dataset(data, path)
    _write_manifest(out_dir, "gen-data", cfg, outputs=["demos.bin"],
                    extra={"trajectories": len(data),
                           "frames": int(sum(len(t) for t in data.trajectories)),
                           "seed": d["seed"], "noise": d["noise"],
                           "embodiment": d["embodiment"]})
    click.echo(f"wrote {path}: {len(data)} trajectories")


@main.command("train-distance")
@_common_options
@click.option("--data", "data_path", required=True, type=click.Path())
@_guarded
def train_distance(config_path, out_dir, seed, data_path):
    """Train a distance model and write the best-validation checkpoint."""
    cfg = _load_config(config_path)
    os.makedirs(out_dir, exist_ok=True)
    dcfg = dict(cfg["distance"])
    if seed is not None:
        dcfg["seed"] = seed
    data = demos.load_dataset(data_path)
    train, val = demos.split_dataset(data, dcfg["holdout"], seed=dcfg["seed"])

    kind = dcfg["kind"]
    if kind == "hold_r":
        model, history = distances.train_hold_r(
            train, epochs=dcfg["epochs"], batch=dcfg["batch"], lr=dcfg["lr"],
            seed=dcfg["seed"], val_data=val)
    elif kind in ("hold_c", "mixture"):
        tri = distances.TripletConfig(margin=dcfg["margin"],
                                      batch=dcfg["batch"])
        model, history = distances.train_hold_c(
            train, cfg=tri, epochs=dcfg["epochs"], lr=dcfg["lr"],
            seed=dcfg["seed"], val_data=val)
        if kind == "mixture":
            model = distances.MixtureDistance(
                model, distances.MixtureDistanceConfig(
                    dcfg["mixture_alpha"], dcfg["mixture_beta"],
                    dcfg["mixture_gamma"]))
    elif kind == "pixel_l2":
        h, w = data.frame_shape
        model, history = distances.PixelL2Distance(h * w), {"loss": [],
                                                            "val_spearman": []}
    else:
        raise cfgmod.ConfigError(f"unknown distance kind {kind!r}")

    ckpt = os.path.join(out_dir, "distance.ckpt")
    distances.save_model(ckpt, model,
                         extra_meta={"config_sha256": cfgmod.checksum(cfg)})
    rows = [(i + 1, loss, rho) for i, (loss, rho) in enumerate(
        zip(history["loss"], history["val_spearman"] or
            [""] * len(history["loss"])))]
    _write_csv(os.path.join(out_dir, "training.csv"), cfgmod.checksum(cfg),
               ["epoch", "loss", "val_spearman"], rows)
    best = max(history["val_spearman"]) if history["val_spearman"] else None
    _write_manifest(out_dir, "train-distance", cfg,
                    outputs=["distance.ckpt", "training.csv"],
                    extra={"kind": kind, "best_val_spearman": best,
                           "seed": dcfg["seed"]})
    click.echo(f"wrote {ckpt}"
               + (f" (best val spearman {best:.4f})" if best is not None else ""))


@main.command("eval-distance")
@click.option("--checkpoint", "ckpt_path", required=True,
              help="model checkpoint, or the literal 'oracle'")
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False))
@click.option("--config", "config_path", default=None)
@_guarded
def eval_distance(ckpt_path, data_path, out_dir, config_path):
    """Score a distance model on a dataset; writes a metrics report."""
    cfg = _load_config(config_path) if config_path else cfgmod.validate(
        {"version": cfgmod.CONFIG_VERSION, "task": "push"})
    os.makedirs(out_dir, exist_ok=True)
    data = demos.load_dataset(data_path)
    if ckpt_path == "oracle":
        # ideal monotone predictions: remaining-steps-to-final-frame
        rows = [np.arange(len(t) - 1, 0, -1, dtype=np.float64)
                for t in data.trajectories if len(t) >= 2]
        table = metrics.PredictionTable(rows, data.dt)
        targets = rows
        kind = "oracle"
    else:
        model, meta = distances.load_model(ckpt_path)
        h, w = data.frame_shape
        if model.in_width is not None and model.in_width != h * w:
            raise ValueError(
                f"frame size mismatch: model expects {model.in_width} pixels, "
                f"dataset frames have {h * w}")
        table = metrics.build_prediction_table(model, data)
        targets = None
        kind = model.kind
    report = metrics.evaluate_table(
        table, targets, time_metrics_comparable=kind in ("hold_r", "oracle"))

    checksum = cfgmod.checksum(cfg)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump({"config_sha256": checksum, "kind": kind,
                   **report.as_dict()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    per_traj = metrics.per_trajectory_spearman(table)
    _write_csv(os.path.join(out_dir, "per_trajectory.csv"), checksum,
               ["trajectory", "spearman"],
               [(i, rho) for i, rho in enumerate(per_traj)])
    _write_manifest(out_dir, "eval-distance", cfg,
                    outputs=["report.json", "per_trajectory.csv"],
                    extra={"kind": kind, "spearman": report.spearman})
    click.echo(f"spearman {report.spearman:.4f} "
               f"misclassification {report.misclassification:.4f}")


def _curve_filename(mode, seed):
    return f"curve_{mode}_seed{seed}.csv"


def _aggregate_rows(curves_by_mode):
    """Median and standard error of success rate / return per eval point."""
    rows = []
    for mode in sorted(curves_by_mode):
        curves = curves_by_mode[mode]
        steps = curves[0].env_steps
        sr = np.array([c.success_rate for c in curves])
        ret = np.array([c.mean_return for c in curves])
        n = sr.shape[0]
        for j, s in enumerate(steps):
            rows.append((mode, s,
                         float(np.median(sr[:, j])),
                         float(np.std(sr[:, j], ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
                         float(np.median(ret[:, j])),
                         float(np.std(ret[:, j], ddof=1) / np.sqrt(n)) if n > 1 else 0.0))
    return rows


def _plot_curves(path, curves_by_mode):
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.fonttype"] = "none"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for mode in sorted(curves_by_mode):
        curves = curves_by_mode[mode]
        steps = curves[0].env_steps
        sr = np.array([c.success_rate for c in curves])
        med = np.median(sr, axis=0)
        if sr.shape[0] > 1:
            err = np.std(sr, axis=0, ddof=1) / np.sqrt(sr.shape[0])
            ax.fill_between(steps, med - err, med + err, alpha=0.2)
        ax.plot(steps, med, label=mode)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("success rate (median over seeds)")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


@main.command("train-policy")
@_common_options
@click.option("--checkpoint", "ckpt_path", default=None,
              help="distance checkpoint (required for shaped modes)")
@click.option("--mode", "mode", default=None,
              type=click.Choice(["sparse_only", "shaped_only",
                                 "shaped_plus_sparse", "oracle"]),
              help="run only this reward mode")
@click.option("--verbose", is_flag=True, default=False)
@_guarded
def train_policy_cmd(config_path, out_dir, seed, ckpt_path, mode, verbose):
    """Run RL for each configured (mode, seed); writes curves, aggregate, plot."""
    cfg = _load_config(config_path)
    os.makedirs(out_dir, exist_ok=True)
    modes = [mode] if mode else cfg["rl"]["modes"]
    seeds = [seed] if seed is not None else cfg["rl"]["seeds"]

    shaped = [m for m in modes if m in ("shaped_only", "shaped_plus_sparse")]
    model = None
    if shaped:
        if ckpt_path is None:
            raise cfgmod.ConfigError(
                f"--checkpoint is required for reward modes {shaped}")
        model, _ = distances.load_model(ckpt_path)

    task = _task_for(cfg)
    embodiment = world.ROBOT
    spec = _build_reward_spec(cfg, model, task, embodiment)
    checksum = cfgmod.checksum(cfg)

    curves_by_mode = {}
    outputs = []
    for m in modes:
        run_cfg = _train_run_config(cfg, m)
        for s in seeds:
            if verbose:
                click.echo(f"[{m} seed {s}]")
            curve, _policy = rl.train_policy(task, model, spec, run_cfg, s,
                                             embodiment=embodiment,
                                             verbose=verbose)
            name = _curve_filename(m, s)
            _write_csv(os.path.join(out_dir, name), checksum,
                       ["env_steps", "mean_return", "success_rate"],
                       zip(curve.env_steps, curve.mean_return,
                           curve.success_rate))
            outputs.append(name)
            curves_by_mode.setdefault(m, []).append(curve)

    _write_csv(os.path.join(out_dir, "aggregate.csv"), checksum,
               ["mode", "env_steps", "median_success", "stderr_success",
                "median_return", "stderr_return"],
               _aggregate_rows(curves_by_mode))
    _plot_curves(os.path.join(out_dir, "learning_curves.svg"), curves_by_mode)
    outputs += ["aggregate.csv", "learning_curves.svg"]
    _write_manifest(out_dir, "train-policy", cfg, outputs=outputs,
                    extra={"modes": modes, "seeds": seeds,
                           "T": spec.T, "switch_threshold": spec.switch_threshold})
    click.echo(f"wrote {len(outputs)} artifacts to {out_dir}")


def _curve_from_csv(path):
    header, rows = _read_csv(path)
    curve = rl.LearningCurve(seed=-1, reward_mode="")
    for r in rows:
        curve.env_steps.append(int(r[0]))
        curve.mean_return.append(float(r[1]))
        curve.success_rate.append(float(r[2]))
    return curve


@main.command("speedup-report")
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False, exists=True),
              help="directory holding curve_<mode>_seed<n>.csv files")
@click.option("--threshold", type=float, default=0.9)
@_guarded
def speedup_report(out_dir, threshold):
    """Median steps-to-threshold per mode and speedup vs sparse_only."""
    by_mode = {}
    budget = 0
    for name in sorted(os.listdir(out_dir)):
        if not (name.startswith("curve_") and name.endswith(".csv")):
            continue
        mode = "_".join(name[len("curve_"):-len(".csv")].split("_")[:-1])
        curve = _curve_from_csv(os.path.join(out_dir, name))
        budget = max(budget, curve.env_steps[-1])
        by_mode.setdefault(mode, []).append(rl.steps_to_threshold(curve,
                                                                  threshold))
    if not by_mode:
        raise demos.DatasetError(f"no curve CSVs found in {out_dir}")

    medians = {}
    for mode, steps in by_mode.items():
        reached = [s for s in steps if s is not None]
        # median counts unfinished runs as the full budget (censored)
        filled = sorted(reached + [budget] * (len(steps) - len(reached)))
        med = filled[len(filled) // 2] if len(filled) % 2 else (
            (filled[len(filled) // 2 - 1] + filled[len(filled) // 2]) / 2)
        medians[mode] = {"median_steps": med,
                         "reached": len(reached), "runs": len(steps),
                         "censored": len(reached) < len(steps)}

    sparse = medians.get("sparse_only")
    report = {"threshold": threshold, "budget": budget, "modes": medians,
              "speedups": {}}
    for mode, entry in medians.items():
        if mode == "sparse_only" or sparse is None or entry["censored"]:
            continue
        ratio = sparse["median_steps"] / entry["median_steps"]
        text = f">= {ratio:.1f}" if sparse["censored"] else f"{ratio:.1f}"
        report["speedups"][mode] = {"ratio": ratio, "text": text,
                                    "lower_bound": sparse["censored"]}
    with open(os.path.join(out_dir, "speedup.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for mode, entry in sorted(medians.items()):
        mark = " (censored)" if entry["censored"] else ""
        click.echo(f"{mode}: median steps-to-{threshold:g} = "
                   f"{entry['median_steps']}{mark}")
    for mode, sp in sorted(report["speedups"].items()):
        click.echo(f"speedup {mode} vs sparse_only: {sp['text']}x")
    if all(entry["censored"] and entry["reached"] == 0
           for entry in medians.values()):
        _fail(1, f"no run reached success threshold {threshold:g}")


@main.command("replay-rewards")
@_common_options
@click.option("--checkpoint", "ckpt_path", required=True)
@click.option("--mode", "mode", default="shaped_plus_sparse",
              type=click.Choice(["shaped_only", "shaped_plus_sparse"]))
@click.option("--episodes", type=int, default=3)
@_guarded
def replay_rewards(config_path, out_dir, seed, ckpt_path, mode, episodes):
    """Roll scripted-expert episodes and log per-step reward traces."""
    cfg = _load_config(config_path)
    os.makedirs(out_dir, exist_ok=True)
    model, _ = distances.load_model(ckpt_path)
    task = _task_for(cfg)
    embodiment = world.ROBOT
    spec = _build_reward_spec(cfg, model, task, embodiment)
    checksum = cfgmod.checksum(cfg)
    base_seed = seed if seed is not None else cfg["demos"]["seed"]

    outputs = []
    for ep in range(episodes):
        traj = demos.rollout_expert(task, embodiment, base_seed + ep)
        chain = rewards.ChainState()
        rows = []
        for t in range(1, len(traj)):
            g = spec.goal_chain[chain.active_goal_index]
            d_active = model.distance(traj.frames[t], g) - model.distance(g, g)
            if mode == "shaped_only":
                ep_spec = rewards.RewardSpec(
                    spec.form, spec.T, False, spec.goal_chain,
                    spec.switch_threshold, spec.switch_streak)
            else:
                ep_spec = rewards.RewardSpec(
                    spec.form, spec.T, True, spec.goal_chain,
                    spec.switch_threshold, spec.switch_streak)
            total, chain = rewards.total_reward(
                ep_spec, model, traj.frames[t - 1], traj.frames[t], task,
                chain, world_state_next=traj.states[t])
            sparse = world.sparse_reward(traj.states[t], task)
            rows.append((t, d_active, total - (sparse if ep_spec.mix_sparse
                                               else 0.0),
                         sparse, total, chain.active_goal_index))
        name = f"rewards_ep{ep}.csv"
        _write_csv(os.path.join(out_dir, name), checksum,
                   ["t", "d_active", "shaped", "sparse", "total",
                    "active_goal_index"], rows)
        outputs.append(name)
    _write_manifest(out_dir, "replay-rewards", cfg, outputs=outputs,
                    extra={"mode": mode, "episodes": episodes,
                           "seed": base_seed, "T": spec.T})
    click.echo(f"wrote {episodes} reward traces to {out_dir}")


if __name__ == "__main__":
    main()
