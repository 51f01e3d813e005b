"""The train loop: collect, update, schedule, log, checkpoint, resume."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import numkit as nk
from ..config import ExperimentConfig
from ..policy.network import Policy
from .ppo import adaptive_kl_lr, ppo_update
from .rollout import EnvPool, build_training_maps


@dataclass
class TrainResult:
    iterations: int
    global_step: int
    checkpoint_path: str
    metrics_path: str
    history: list[dict]


def _ensure_layout(output_dir: Path) -> dict[str, Path]:
    layout = {name: output_dir / name for name in ("configs", "checkpoints", "logs", "reports")}
    for path in layout.values():
        path.mkdir(parents=True, exist_ok=True)
    return layout


def save_checkpoint(path, policy: Policy, adam: nk.AdamState, extra: dict,
                    precision: str = "float64") -> None:
    arrays = {f"param.{k}": p.data for k, p in policy.params.items()}
    arrays.update({f"adam.m.{k}": v for k, v in adam.m.items()})
    arrays.update({f"adam.v.{k}": v for k, v in adam.v.items()})
    extra = dict(extra)
    extra["adam_step"] = adam.step
    extra["policy_config"] = policy.cfg.to_dict()
    nk.save_arrays(path, arrays, precision=precision, extra=extra)


def load_checkpoint(path) -> tuple[Policy, nk.AdamState, dict]:
    from ..policy.network import PolicyConfig

    arrays, extra = nk.load_arrays(path)
    params = {k[len("param."):]: nk.Tensor(v, requires_grad=True)
              for k, v in arrays.items() if k.startswith("param.")}
    adam = nk.AdamState()
    adam.step = int(extra.get("adam_step", 0))
    adam.m = {k[len("adam.m."):]: v.copy() for k, v in arrays.items() if k.startswith("adam.m.")}
    adam.v = {k[len("adam.v."):]: v.copy() for k, v in arrays.items() if k.startswith("adam.v.")}
    cfg = PolicyConfig(**extra["policy_config"])
    return Policy(cfg, params), adam, extra


def train(cfg: ExperimentConfig, resume: str | None = None,
          progress=None) -> TrainResult:
    """Run PPO to ``cfg.ppo.total_steps`` environment transitions.

    Writes the effective config, JSON-lines metrics, periodic checkpoints,
    and training-curve figures under ``cfg.output_dir``. ``resume`` restores
    parameters, optimizer moments, and the full environment pool snapshot so
    the next collected batch matches an uninterrupted run.
    """
    nk.set_default_dtype(cfg.ppo.precision)
    output_dir = Path(cfg.output_dir)
    layout = _ensure_layout(output_dir)
    (layout["configs"] / "effective_config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    metrics_path = layout["logs"] / "metrics.jsonl"

    maps = build_training_maps(cfg)
    if resume is not None:
        policy, adam, extra = load_checkpoint(resume)
        pool = EnvPool(cfg, maps, policy)
        pool.restore(extra["pool"])
        iteration = int(extra["iteration"])
        global_step = int(extra["global_step"])
        lr = float(extra["lr"])
        mode = "a"
    else:
        policy = Policy.init(cfg.policy, seed=cfg.seed)
        adam = nk.AdamState()
        pool = EnvPool(cfg, maps, policy)
        iteration = 0
        global_step = 0
        lr = cfg.ppo.learning_rate
        mode = "w"

    history: list[dict] = []
    last_ckpt = layout["checkpoints"] / "latest.ckpt"
    with open(metrics_path, mode, encoding="utf-8") as log:
        while global_step < cfg.ppo.total_steps:
            t0 = time.perf_counter()
            batch = pool.collect(min(cfg.ppo.batch_size, cfg.ppo.total_steps - global_step))
            t_collect = time.perf_counter() - t0

            t1 = time.perf_counter()
            policy, stats = ppo_update(batch, policy, adam, cfg.ppo, lr,
                                       diagnostics_path=layout["logs"] / "nan_dump.json")
            pool.policy = policy
            t_update = time.perf_counter() - t1

            if cfg.ppo.lr_schedule == "adaptive_kl":
                lr = adaptive_kl_lr(stats.kl, lr, target=cfg.ppo.kl_target,
                                    lr_min=cfg.ppo.lr_min, lr_max=cfg.ppo.lr_max)
            iteration += 1
            global_step += batch.transitions

            row = {
                "iteration": iteration,
                "global_step": global_step,
                "lr": lr,
                "loss": stats.loss,
                "policy_loss": stats.policy_loss,
                "value_loss": stats.value_loss,
                "entropy": stats.entropy,
                "kl": stats.kl,
                "clip_fraction": stats.clip_fraction,
                "grad_norm": stats.grad_norm,
                "mean_reward": batch.mean_reward,
                "episodes": len(batch.episode_stats),
                "collect_seconds": round(t_collect, 3),
                "update_seconds": round(t_update, 3),
            }
            if batch.episode_stats:
                classical = [e for e in batch.episode_stats if e.mode == "classical"]
                lifelong = [e for e in batch.episode_stats if e.mode == "lifelong"]
                if classical:
                    row["csr"] = float(np.mean([e.csr for e in classical]))
                    row["isr"] = float(np.mean([e.isr for e in classical]))
                    row["soc"] = float(np.mean([e.soc for e in classical]))
                if lifelong:
                    row["throughput"] = float(np.mean([e.throughput for e in lifelong]))
            log.write(json.dumps(row) + "\n")
            log.flush()
            history.append(row)
            if progress is not None:
                progress(row)

            if iteration % cfg.ppo.checkpoint_every == 0 or global_step >= cfg.ppo.total_steps:
                extra = {"iteration": iteration, "global_step": global_step, "lr": lr,
                         "pool": pool.snapshot(), "experiment_config": cfg.to_dict()}
                save_checkpoint(last_ckpt, policy, adam, extra, precision=cfg.ppo.precision)
                numbered = layout["checkpoints"] / f"iter{iteration:06d}.ckpt"
                save_checkpoint(numbered, policy, adam, extra, precision=cfg.ppo.precision)

    try:
        from ..figures import render_training_curves
        render_training_curves(metrics_path, layout["reports"] / "training_curves.png")
    except Exception:
        pass  # figures are best-effort; the JSONL log is the source of truth

    return TrainResult(iterations=iteration, global_step=global_step,
                       checkpoint_path=str(last_ckpt), metrics_path=str(metrics_path),
                       history=history)
