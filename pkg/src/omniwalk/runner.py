"""Run orchestration behind the command-line interface: training with
checkpoints and metrics, evaluation, ablations and plot-data export."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .curriculum import EpisodeCounter, SchedulerConfig
from .env import CONTROL_DT, make_env
from .env.biped import default_biped_scheduler
from .env.description import load_description
from .mathkit import RngStream, TrainingDivergence
from .net import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .reward import CurriculumCoeff, total_reward
from .rlcore import Policy, Trainer, format_metrics_row, metrics_header

METRICS_FILE = "metrics.csv"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_DIR = "checkpoints"
TRACKING_COLUMNS = ("t", "vx_cmd", "vy_cmd", "wz_cmd", "vx", "vy", "wz")


def env_default_scheduler(name: str) -> SchedulerConfig:
    return default_biped_scheduler() if name == "biped" else SchedulerConfig()


def env_kwargs(cfg: RunConfig) -> dict:
    kw = {}
    if cfg.run.description:
        kw["description"] = load_description(cfg.run.description)
    return kw


def build_trainer(cfg: RunConfig, disable_randomization: bool = False) -> Trainer:
    name = cfg.run.env
    sched = cfg.scheduler_config(env_default_scheduler(name))
    transfer = cfg.transfer_config(disabled=disable_randomization)
    extra = env_kwargs(cfg)

    def factory(index, counter, rng):
        return make_env(name, scheduler=sched, transfer=transfer, counter=counter, rng=rng,
                        max_episode_steps=cfg.run.max_episode_steps,
                        init_noise=cfg.run.init_noise, **extra)

    trainer = Trainer(factory, cfg.ppo, cfg.reward, seed=cfg.run.seed)
    eval_transfer = cfg.transfer_config(evaluation=True, disabled=disable_randomization)

    def eval_factory():
        return make_env(name, scheduler=sched, transfer=eval_transfer,
                        counter=EpisodeCounter(), rng=RngStream(cfg.run.seed).child(7),
                        max_episode_steps=10 ** 9, init_noise=cfg.run.init_noise, **extra)

    trainer.eval_env_factory = eval_factory
    return trainer


# ---------------------------------------------------------------------------
# checkpoints


def trainer_checkpoint(tr: Trainer) -> Checkpoint:
    p = tr.policy
    return Checkpoint(p.actor_spec, p.critic_spec, p.actor.flat.copy(), p.critic.flat.copy(),
                      tr.actor_adam.copy(), tr.critic_adam.copy(), epoch=tr.epoch,
                      episodes=tr.counter.value, c_vel=tr.c_vel.value, c_foot=tr.c_foot.value,
                      head=p.head.name, runtime=tr.runtime_state())


def restore_trainer(tr: Trainer, ck: Checkpoint) -> None:
    p = tr.policy
    if ck.head != p.head.name:
        raise CheckpointError(f"checkpoint policy head {ck.head!r} != configured {p.head.name!r}")
    p.actor.set_flat(ck.actor)
    p.critic.set_flat(ck.critic)
    tr.actor_adam = ck.actor_adam.copy()
    tr.critic_adam = ck.critic_adam.copy()
    tr.epoch = ck.epoch
    tr.c_vel = CurriculumCoeff(ck.c_vel, tr.c_vel.decay)
    tr.c_foot = CurriculumCoeff(ck.c_foot, tr.c_foot.decay)
    if ck.runtime:
        tr.restore_runtime_state(ck.runtime)
    tr.counter.value = ck.episodes


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    status: int
    epochs_done: int
    out_dir: Path
    message: str = ""


def write_manifest(out: Path, cfg: RunConfig, checkpoints: list, started: str) -> None:
    manifest = {
        "config": cfg.to_dict(),
        "version": f"omniwalk {__version__}",
        "seed": cfg.run.seed,
        "start_time": started,
        "metrics": METRICS_FILE,
        "checkpoints": checkpoints,
        "control_dt": CONTROL_DT,
        "steps_per_epoch": cfg.ppo.steps,
        "n_envs": cfg.ppo.n_envs,
        "zeta": cfg.scheduler.zeta,
        "curriculum": cfg.scheduler.enabled,
    }
    tmp = out / (MANIFEST_FILE + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    tmp.replace(out / MANIFEST_FILE)


def _truncate_metrics(path: Path, epochs: int) -> None:
    """Keep the header and the first ``epochs`` rows (resume after a crash)."""
    if not path.exists():
        path.write_text(metrics_header() + "\n")
        return
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(lines[:1 + epochs]))


def train(cfg: RunConfig, resume: str | Path | None = None, log=print,
          disable_randomization: bool = False) -> TrainResult:
    out = Path(cfg.run.out_dir)
    (out / CHECKPOINT_DIR).mkdir(parents=True, exist_ok=True)
    tr = build_trainer(cfg, disable_randomization)
    if resume:
        ck = load_checkpoint(resume, tr.policy.actor_spec, tr.policy.critic_spec)
        restore_trainer(tr, ck)
        log(f"resumed from {resume} at epoch {tr.epoch}")
    metrics = out / METRICS_FILE
    if resume:
        _truncate_metrics(metrics, tr.epoch)
    else:
        metrics.write_text(metrics_header() + "\n")
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    checkpoints: list[str] = []
    write_manifest(out, cfg, checkpoints, started)
    last_good = trainer_checkpoint(tr)
    every = max(1, cfg.run.checkpoint_every)
    while tr.epoch < cfg.run.epochs:
        try:
            record = tr.train_epoch()
        except TrainingDivergence as exc:
            path = out / CHECKPOINT_DIR / "last_good.ckpt"
            save_checkpoint(last_good, path)
            checkpoints.append(str(path.relative_to(out)))
            write_manifest(out, cfg, checkpoints, started)
            log(f"training diverged at epoch {tr.epoch}: {exc}; saved {path}")
            return TrainResult(2, tr.epoch, out, str(exc))
        with metrics.open("a") as fh:
            fh.write(format_metrics_row(record) + "\n")
            fh.flush()
        log(f"epoch {record['epoch']}: return {record['mean_return']:.3f} "
            f"K {record['k_vel_mean']:.3f} C_v {record['C_v']:.3f}")
        last_good = trainer_checkpoint(tr)
        if tr.epoch % every == 0 or tr.epoch == cfg.run.epochs:
            path = out / CHECKPOINT_DIR / f"epoch_{tr.epoch:05d}.ckpt"
            save_checkpoint(last_good, path)
            save_checkpoint(last_good, out / CHECKPOINT_DIR / "latest.ckpt")
            checkpoints.append(str(path.relative_to(out)))
            write_manifest(out, cfg, checkpoints, started)
    return TrainResult(0, tr.epoch, out)


# ---------------------------------------------------------------------------
# evaluation


def read_velocity_script(path) -> list[tuple[float, np.ndarray]]:
    """CSV rows ``time_s, vx, vy, wz``; a header row is optional."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                vals = [float(x) for x in rec[:4]]
            except ValueError:
                if rows:
                    raise ValueError(f"malformed velocity script row {rec!r}") from None
                continue  # header
            if len(vals) != 4:
                raise ValueError(f"velocity script rows need 4 columns, got {rec!r}")
            rows.append((vals[0], np.array(vals[1:])))
    if not rows:
        raise ValueError("velocity script is empty")
    rows.sort(key=lambda r: r[0])
    return rows


def random_velocity_script(sched: SchedulerConfig, duration: float, rng: RngStream,
                           interval: float = 5.0) -> list[tuple[float, np.ndarray]]:
    out = []
    t = 0.0
    while t < duration:
        out.append((t, sched.final_lo + rng.uniform(0.0, 1.0, 3) * (sched.final_hi - sched.final_lo)))
        t += interval
    return out


def evaluate(checkpoint, cfg: RunConfig, out_dir, script=None, duration: float = 60.0,
             trials: int = 10, disable_randomization: bool = False, log=print) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.run.env
    sched = cfg.scheduler_config(env_default_scheduler(name))
    transfer = cfg.transfer_config(evaluation=True, disabled=disable_randomization)
    env = make_env(name, scheduler=sched, transfer=transfer, counter=EpisodeCounter(),
                   rng=RngStream(cfg.run.seed).child(11), max_episode_steps=10 ** 9,
                   init_noise=cfg.run.init_noise, **env_kwargs(cfg))
    ck = load_checkpoint(checkpoint)
    policy = Policy(env.obs_dim, env.action_dim, ck.actor_spec.hidden, ck.head,
                    *env.observation_normalizer())
    if ck.actor_spec != policy.actor_spec:
        raise CheckpointError(f"checkpoint actor spec {ck.actor_spec} does not match "
                              f"environment {name!r} ({policy.actor_spec})")
    policy.actor.set_flat(ck.actor)
    script_rng = RngStream(cfg.run.seed).child(12)
    n_steps = int(round(duration / CONTROL_DT))
    rows = []
    for trial in range(trials):
        events = read_velocity_script(script) if script else \
            random_velocity_script(sched, duration, script_rng)
        obs = env.reset(v_des=events[0][1])
        nxt = 1
        falls, ksum = 0, 0.0
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACKING_COLUMNS)
        for k in range(n_steps):
            t = k * CONTROL_DT
            while nxt < len(events) and events[nxt][0] <= t + 1e-9:
                env.set_command(events[nxt][1])
                nxt += 1
            res = env.step(policy.act_deterministic(obs))
            ri = res.reward_inputs
            terms = total_reward(ri, cfg.reward, env.alive_thresholds, 1.0, 1.0)
            ksum += terms.k_vel
            w.writerow([f"{(k + 1) * CONTROL_DT:.3f}", *(f"{x:.6f}" for x in ri.v_cmd),
                        f"{ri.v_local[0]:.6f}", f"{ri.v_local[1]:.6f}", f"{ri.omega_z:.6f}"])
            obs = res.observation
            if res.done:
                falls += 1
                current = env.command.v_new.copy()
                obs = env.reset(v_des=current)
        (out / f"tracking_trial{trial:02d}.csv").write_text(buf.getvalue())
        rows.append({"trial": trial, "falls": falls, "steps": n_steps,
                     "mean_k_vel": ksum / max(n_steps, 1)})
        log(f"trial {trial}: falls {falls}, mean K {rows[-1]['mean_k_vel']:.3f}")
    with (out / "falls.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["trial", "falls", "steps", "mean_k_vel"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    report = {
        "checkpoint": str(checkpoint),
        "env": name,
        "trials": trials,
        "duration_s": duration,
        "policy": "distribution mode (deterministic)",
        "action_filter_hz": None if disable_randomization else transfer.filter_cutoff_hz,
        "latency_s": 0.0 if disable_randomization else transfer.fixed_latency,
        "total_falls": int(sum(r["falls"] for r in rows)),
        "success_rate": float(np.mean([r["falls"] == 0 for r in rows])) if rows else 0.0,
        "mean_k_vel": float(np.mean([r["mean_k_vel"] for r in rows])) if rows else 0.0,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


# ---------------------------------------------------------------------------
# ablations


ABLATIONS = ("no-curriculum", "gaussian-policy-surrogate")


def ablation_config(cfg: RunConfig, variant: str) -> RunConfig:
    v = cfg.copy()
    if variant == "no-curriculum":
        v.scheduler.enabled = False
    elif variant == "gaussian-policy-surrogate":
        v.ppo.head = "gaussian"
    else:
        raise ValueError(f"unknown ablation {variant!r}; choose from {ABLATIONS}")
    return v


def ablate(cfg: RunConfig, variant: str, log=print) -> dict:
    root = Path(cfg.run.out_dir)
    base = cfg.copy()
    base.run.out_dir = str(root / "baseline")
    var = ablation_config(cfg, variant)
    var.run.out_dir = str(root / variant)
    results = {}
    for label, c in (("baseline", base), (variant, var)):
        log(f"== {label}")
        res = train(c, log=log)
        results[label] = res
        if res.status != 0:
            log(f"{label} stopped early: {res.message}")
    rows_b = read_metrics(root / "baseline" / METRICS_FILE)
    rows_v = read_metrics(root / variant / METRICS_FILE)
    with (root / "comparison.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "baseline_return", f"{variant}_return", "baseline_k_vel",
                    f"{variant}_k_vel"])
        for rb, rv in zip(rows_b, rows_v):
            w.writerow([rb["epoch"], rb["mean_return"], rv["mean_return"], rb["k_vel_mean"],
                        rv["k_vel_mean"]])
    report = {
        "variant": variant,
        "status": {k: r.status for k, r in results.items()},
        "epochs": {k: r.epochs_done for k, r in results.items()},
        "final_return": {
            "baseline": float(rows_b[-1]["mean_return"]) if rows_b else None,
            variant: float(rows_v[-1]["mean_return"]) if rows_v else None,
        },
    }
    if variant == "gaussian-policy-surrogate":
        report["clipping"] = ("Gaussian samples drawn unclipped for log-probabilities, "
                              "clipped to [0, 1] before scaling to the action bounds")
    (root / "ablation_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


# ---------------------------------------------------------------------------
# plot data


def read_metrics(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no metrics file at {path}")
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def limit_epoch(rows: list[dict], manifest: dict) -> int:
    """First epoch after which the episode counter reached the scheduler limit."""
    if not manifest.get("curriculum", True):
        return 0
    zeta = int(manifest["zeta"])
    for r in rows:
        if int(r["episodes"]) >= zeta:
            return int(r["epoch"])
    return -1


def export_plotdata(run_dir, out_dir=None) -> Path:
    run = Path(run_dir)
    rows = read_metrics(run / METRICS_FILE)
    manifest_path = run / MANIFEST_FILE
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    out = Path(out_dir) if out_dir else run / "plotdata"
    out.mkdir(parents=True, exist_ok=True)
    marker = limit_epoch(rows, manifest)
    with (out / "returns.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_return", "k_vel_mean", "limit_epoch", "limit_reached"])
        for r in rows:
            e = int(r["epoch"])
            w.writerow([e, r["mean_return"], r["k_vel_mean"], marker, int(e == marker)])
    for f in sorted(run.glob("**/tracking_trial*.csv")):
        if out in f.parents:
            continue
        rel = f.relative_to(run)
        dest = out / ("tracking_" + "_".join(rel.parts))
        dest.write_bytes(f.read_bytes())
    return out
