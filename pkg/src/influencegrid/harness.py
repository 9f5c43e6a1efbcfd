"""Experiment runner: seeding, rollout orchestration, influence computation,
training, logging and evaluation.

One :class:`Runner` owns one (config, seed) run: the environment, its N
agents (parameters are never shared), the influence bookkeeping for the
configured variant, and the trajectory/metric logs.  Runs are byte-for-byte
reproducible in single-threaded mode; with ``train.workers > 1`` rollout
workers act on parameter snapshots and their updates are applied serially
under a lock (determinism is not guaranteed there).

Influence variants:

* ``basic`` -- the configured influencers act first each step; influencees
  see their realized actions in a dedicated input slot, and the influencer's
  reward is the divergence between each influencee's realized conditional
  policy and its counterfactual marginal, summed over influencees.
* ``comm`` -- every agent emits a discrete symbol each step; the influence
  of last step's symbol on every listener's current action is credited to
  the message head's reward at the emission step.
* ``moa`` -- each agent sweeps counterfactual own-actions through its own
  next-action predictor; other agents outside the field of view contribute
  zero when the visibility gate is on.  (With the pmi divergence the value
  also needs the others' realized next actions, so it is booked one step
  late; an episode's final step then goes unrewarded.)
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint, influence as infl, moa as moa_mod, nets, policy, runio
from .config import ExperimentConfig, format_config
from .envs import Env
from .errors import NumericError
from .grid import BOX_OPENED
from .metrics import EpisodeSummary, TrajectoryLog, summarize, window_summary
from .nets import NetSpec
from .policy import OptState, RolloutBatch


@dataclass
class StepEntry:
    """Mutable per-(step, agent) record; finalized once the next step ran.

    ``log_c``/``log_recv`` alias the trajectory log's rows for this step, so
    late influence credits (communication, deferred pmi) show up in the log.
    """

    window: np.ndarray
    extras: np.ndarray
    h_pre: np.ndarray
    action: int
    value: float
    log_c: np.ndarray
    log_recv: np.ndarray
    e: float = 0.0
    r_env_intrinsic: float = 0.0
    r_msg_intrinsic: float = 0.0
    message: int = -1
    msg_value: float = 0.0
    moa_extras: np.ndarray | None = None
    moa_h_pre: np.ndarray | None = None
    moa_target: np.ndarray | None = None
    moa_mask: np.ndarray | None = None


@dataclass
class AgentRuntime:
    params: dict[str, np.ndarray]
    opt: OptState
    snapshot: dict[str, np.ndarray] = field(default_factory=dict)

    def refresh_snapshot(self):
        self.snapshot = {k: v.copy() for k, v in self.params.items()}


@dataclass
class WorkerState:
    """Everything one rollout worker owns exclusively."""

    wid: int = 0
    env_state: object = None
    hs: list = field(default_factory=list)
    moa_hs: list = field(default_factory=list)
    buffers: list[list[StepEntry]] = field(default_factory=list)
    act_rngs: list = field(default_factory=list)
    episode_seed_rng: object = None
    episode: int = 0
    episode_step: int = 0
    prev_msg_dists: list = field(default_factory=list)
    pending_pmi: list = field(default_factory=list)
    box_opened_step: int | None = None
    last_box_opened: int | None = None   # survives the end-of-episode reset
    log: dict[str, list] = field(default_factory=lambda: {
        "steps": [], "episodes": [], "actions": [], "messages": [],
        "e": [], "c": [], "values": [], "visible": [], "recv": []})


@dataclass
class RunResult:
    seed: int
    out_dir: Path | None
    log: TrajectoryLog
    summaries: list[EpisodeSummary]
    final_params: list[dict[str, np.ndarray]]


def make_net_spec(cfg: ExperimentConfig, env: Env) -> NetSpec:
    return NetSpec(
        view=env.view,
        n_actions=env.n_actions,
        n_agents=env.n_agents,
        n_symbols=cfg.comm_symbols,
        basic_action_input=cfg.influence.variant == infl.BASIC,
        fc_width=cfg.train.fc_width,
        hidden_width=cfg.train.hidden_width,
        moa=cfg.moa.enabled and env.n_agents >= 2,
    )


class Runner:
    """One (config, seed) run; training or frozen evaluation."""

    def __init__(self, cfg: ExperimentConfig, seed: int,
                 agent_params: list[dict[str, np.ndarray]] | None = None,
                 training: bool = True):
        self.cfg = cfg
        self.seed = seed
        self.training = training
        self.env = Env(cfg.env)
        cfg.influence.validate(self.env.n_agents)
        self.n = self.env.n_agents
        self.spec = make_net_spec(cfg, self.env)
        self.variant = cfg.influence.variant
        if self.variant == infl.BASIC:
            self.influencers = list(cfg.influence.influencers)
            self.influencees = [i for i in range(self.n)
                                if i not in cfg.influence.influencers]
        else:
            self.influencers = list(range(self.n))
            self.influencees = list(range(self.n))
        self.global_step = 0
        self.lock = threading.Lock()
        self.agents = []
        for i in range(self.n):
            if agent_params is not None:
                params = {k: np.array(v, dtype=float)
                          for k, v in agent_params[i].items()}
            else:
                rng = np.random.Generator(np.random.PCG64(
                    np.random.SeedSequence([seed, 300 + i])))
                params = nets.init_params(self.spec, rng)
            runtime = AgentRuntime(params=params, opt=OptState())
            runtime.refresh_snapshot()
            self.agents.append(runtime)

    # -- worker lifecycle -----------------------------------------------------

    def _make_worker(self, wid: int) -> WorkerState:
        w = WorkerState(wid=wid)
        w.episode_seed_rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([self.seed, 100 + wid])))
        w.act_rngs = [
            np.random.Generator(np.random.PCG64(
                np.random.SeedSequence([self.seed, 2000 + wid * 64 + i])))
            for i in range(self.n)
        ]
        w.episode = wid * 1_000_000
        self._reset_episode(w)
        return w

    def _reset_episode(self, w: WorkerState):
        w.env_state = self.env.reset(int(w.episode_seed_rng.integers(2 ** 62)))
        w.hs = [policy.zero_state(self.spec) for _ in range(self.n)]
        w.moa_hs = [moa_mod.zero_state(self.spec) for _ in range(self.n)]
        w.buffers = [[] for _ in range(self.n)]
        w.prev_msg_dists = [None] * self.n
        w.pending_pmi = []
        w.episode_step = 0
        w.box_opened_step = None

    # -- influence helpers ------------------------------------------------------

    def _beta_now(self) -> float:
        c = self.cfg.influence
        return policy.curriculum_weight(self.global_step, c.curriculum_steps, c.beta)

    def _prior(self, dist: np.ndarray) -> np.ndarray:
        if self.cfg.influence.prior == infl.PRIOR_UNIFORM:
            return np.full(len(dist), 1.0 / len(dist))
        return dist

    def _extras_slot(self, block: str) -> int:
        n, a, m = self.n, self.spec.n_actions, self.spec.n_symbols
        if block == "prev_actions":
            return 0
        if block == "prev_messages":
            return n * a
        if block == "cur_actions":
            return n * a + (n * m if self.spec.comm else 0)
        raise ValueError(block)

    def _sweep_extras(self, extras: np.ndarray, block: str, agent: int,
                      width: int) -> np.ndarray:
        """Extras batch with one agent's slot in ``block`` swept over all codes."""
        base = self._extras_slot(block) + agent * width
        batch = np.repeat(extras[None, :], width, axis=0)
        batch[:, base:base + width] = np.eye(width)
        return batch

    def _credit(self, w: WorkerState, k: int, result: infl.InfluenceResult,
                entry: StepEntry | None, head: str, beta: float):
        """Book an influencer's reward and per-influencee attributions."""
        if entry is not None:
            entry.log_c[k] += result.total
            if head == "env":
                entry.r_env_intrinsic += beta * result.total
            else:
                entry.r_msg_intrinsic += beta * result.total
        for j, contrib in result.per_target.items():
            if entry is not None:
                entry.log_recv[j] += contrib
            if self.cfg.influence.influencee_reward and self.variant == infl.BASIC \
                    and w.buffers[j]:
                w.buffers[j][-1].r_env_intrinsic += beta * contrib

    # -- the step -----------------------------------------------------------------

    def _act_one(self, i: int, w: WorkerState, flat: np.ndarray, extras: np.ndarray):
        params = self.agents[i].snapshot
        f2, _ = nets.fc_forward(params, flat)
        h_new, _ = nets.gru_step(params, "gru_",
                                 np.concatenate([f2, extras]), w.hs[i])
        la = h_new @ params["act_w"] + params["act_b"]
        dist = nets.softmax(nets.require_finite(la, "action_logits"))
        value = float(h_new @ params["val_w"] + params["val_b"][0])
        msg, msg_value, msg_dist = -1, 0.0, None
        if self.spec.comm:
            lm = h_new @ params["msg_w"] + params["msg_b"]
            msg_dist = nets.softmax(nets.require_finite(lm, "message_logits"))
            msg = policy.sample(msg_dist, w.act_rngs[i])
            msg_value = float(h_new @ params["mval_w"] + params["mval_b"][0])
        action = policy.sample(dist, w.act_rngs[i])
        cache = policy.StepCache(f2=f2, extras=extras, h_pre=w.hs[i].copy())
        w.hs[i] = h_new
        return action, dist, value, msg, msg_dist, msg_value, cache

    def step_once(self, w: WorkerState) -> bool:
        """One environment step for one worker; returns True at episode end."""
        cfg = self.cfg
        state = w.env_state
        with self.lock:
            step_id = self.global_step
            self.global_step += 1

        observations = [self.env.observe(state, i) for i in range(self.n)]
        windows = [nets.encode_window(o) for o in observations]
        flats = []
        for i in range(self.n):
            flat, _ = nets.conv_forward(self.agents[i].snapshot, self.spec, windows[i])
            flats.append(flat)
        visible = np.array([
            sum(1 << j for j in range(self.n) if self.env.is_visible(state, i, j))
            for i in range(self.n)
        ], dtype=np.int64)
        prev_messages = observations[0].prev_messages

        actions = np.full(self.n, -1, dtype=np.int64)
        dists: list = [None] * self.n
        values = np.zeros(self.n)
        messages = np.full(self.n, -1, dtype=np.int64)
        msg_dists: list = [None] * self.n
        msg_values = np.zeros(self.n)
        caches: list = [None] * self.n

        def run_agent(i, cur_vector):
            extras = nets.encode_extras(self.spec, observations[i].prev_actions,
                                        prev_messages, cur_vector)
            (actions[i], dists[i], values[i], messages[i], msg_dists[i],
             msg_values[i], caches[i]) = self._act_one(i, w, flats[i], extras)

        if self.variant == infl.BASIC:
            for i in self.influencers:
                run_agent(i, None)
            cur = np.full(self.n, -1, dtype=np.int64)
            cur[self.influencers] = actions[self.influencers]
            for i in self.influencees:
                run_agent(i, cur)
        else:
            for i in range(self.n):
                run_agent(i, None)

        moa_caches: list = [None] * self.n
        if self.spec.moa:
            for i in range(self.n):
                f_m, _ = nets.moa_fc_forward(self.agents[i].snapshot, flats[i])
                moa_caches[i] = moa_mod.MoaStepCache(f=f_m, h_pre=w.moa_hs[i].copy())

        w.env_state, env_rewards, events = self.env.step(
            state, actions, messages if self.spec.comm else None)
        if w.box_opened_step is None and any(e.kind == BOX_OPENED for e in events):
            w.box_opened_step = w.episode_step

        # append this step's log rows; c/recv stay aliased into the entries so
        # late credits (comm, deferred pmi) land in the log as well
        lg = w.log
        lg["steps"].append(step_id)
        lg["episodes"].append(w.episode)
        lg["actions"].append(actions.copy())
        lg["messages"].append(messages.copy())
        lg["e"].append(env_rewards.copy())
        lg["values"].append(values.copy())
        lg["visible"].append(visible)
        c_row = np.zeros(self.n)
        recv_row = np.zeros(self.n)
        lg["c"].append(c_row)
        lg["recv"].append(recv_row)

        beta = self._beta_now()
        for i in range(self.n):
            entry = StepEntry(
                window=windows[i], extras=caches[i].extras, h_pre=caches[i].h_pre,
                action=int(actions[i]), value=float(values[i]),
                log_c=c_row, log_recv=recv_row,
                e=float(env_rewards[i]),
                message=int(messages[i]), msg_value=float(msg_values[i]),
            )
            if self.spec.moa:
                entry.moa_extras = nets.one_hot_block(actions, self.spec.n_actions)
                entry.moa_h_pre = moa_caches[i].h_pre
                entry.moa_target = np.zeros(self.n - 1, dtype=np.int64)
                if cfg.moa.visible_only:
                    mask = [bool(visible[i] >> j & 1)
                            for j in range(self.n) if j != i]
                else:
                    mask = [True] * (self.n - 1)
                entry.moa_mask = np.array(mask, dtype=bool)
            w.buffers[i].append(entry)

        # fill the previous entries' prediction targets with this step's actions
        if self.spec.moa and w.episode_step > 0:
            for k in range(self.n):
                if len(w.buffers[k]) >= 2:
                    w.buffers[k][-2].moa_target = np.array(
                        [actions[j] for j in range(self.n) if j != k],
                        dtype=np.int64)

        # deferred pmi influence from the previous step, now that the other
        # agents' realized next actions are known
        for k, preds, prior, vis, realized in w.pending_pmi:
            other_ids = [j for j in range(self.n) if j != k]
            targets = {j: int(actions[j]) for j in other_ids}
            result = infl.moa_influence(preds, other_ids, realized, prior,
                                        cfg.influence.divergence, vis, targets)
            prev_entry = w.buffers[k][-2] if len(w.buffers[k]) >= 2 else None
            self._credit(w, k, result, prev_entry, "env", beta)
        w.pending_pmi = []

        if self.variant == infl.COMM and w.episode_step > 0:
            for k in range(self.n):
                if prev_messages[k] < 0 or w.prev_msg_dists[k] is None:
                    continue
                fns, targets = {}, {}
                for j in range(self.n):
                    if j == k:
                        continue
                    batch = self._sweep_extras(caches[j].extras, "prev_messages",
                                               k, self.spec.n_symbols)
                    cond = policy.replay_action_dists(
                        self.agents[j].snapshot, self.spec, caches[j], batch)
                    fns[j] = lambda m, c=cond: c[m]
                    targets[j] = int(actions[j])
                result = infl.comm_influence(
                    fns, self.spec.n_symbols, int(prev_messages[k]),
                    self._prior(w.prev_msg_dists[k]),
                    cfg.influence.divergence, targets)
                prev_entry = w.buffers[k][-2] if len(w.buffers[k]) >= 2 else None
                self._credit(w, k, result, prev_entry, "msg", beta)

        if self.variant == infl.BASIC:
            for k in self.influencers:
                fns, targets = {}, {}
                for j in self.influencees:
                    batch = self._sweep_extras(caches[j].extras, "cur_actions",
                                               k, self.spec.n_actions)
                    cond = policy.replay_action_dists(
                        self.agents[j].snapshot, self.spec, caches[j], batch)
                    fns[j] = lambda a, c=cond: c[a]
                    targets[j] = int(actions[j])
                result = infl.basic_influence(
                    fns, self.spec.n_actions, int(actions[k]),
                    self._prior(dists[k]), cfg.influence.divergence, targets)
                self._credit(w, k, result, w.buffers[k][-1], "env", beta)

        if self.variant == infl.MOA:
            for k in range(self.n):
                sweep = np.repeat(actions[None, :], self.spec.n_actions, axis=0)
                sweep[:, k] = np.arange(self.spec.n_actions)
                preds = moa_mod.replay_moa_dists(
                    self.agents[k].snapshot, self.spec, moa_caches[k], sweep)
                vis = None
                if cfg.influence.visibility_gate:
                    vis = {j: bool(visible[k] >> j & 1)
                           for j in range(self.n) if j != k}
                if cfg.influence.divergence == infl.PMI:
                    w.pending_pmi.append(
                        (k, preds, self._prior(dists[k]), vis, int(actions[k])))
                else:
                    other_ids = [j for j in range(self.n) if j != k]
                    result = infl.moa_influence(
                        preds, other_ids, int(actions[k]),
                        self._prior(dists[k]), cfg.influence.divergence, vis)
                    self._credit(w, k, result, w.buffers[k][-1], "env", beta)

        if self.spec.moa:
            joint = nets.one_hot_block(actions, self.spec.n_actions)
            for i in range(self.n):
                w.moa_hs[i], _ = nets.gru_step(
                    self.agents[i].snapshot, "moa_gru_",
                    np.concatenate([moa_caches[i].f, joint]), w.moa_hs[i])

        for i in range(self.n):
            w.prev_msg_dists[i] = msg_dists[i]
        w.episode_step += 1

        done = self.env.done(w.env_state)
        if self.training:
            for i in range(self.n):
                if done or len(w.buffers[i]) >= self.cfg.train.rollout_len + 1:
                    self._flush(w, i, terminal=done)
        if done:
            w.last_box_opened = w.box_opened_step
            w.episode += 1
            self._reset_episode(w)
        return done

    # -- training -------------------------------------------------------------

    def _flush(self, w: WorkerState, agent_i: int, terminal: bool):
        buf = w.buffers[agent_i]
        if not buf:
            return
        hyper = self.cfg.train
        seg = buf if terminal else buf[: hyper.rollout_len]
        boot = None if terminal else buf[hyper.rollout_len]
        alpha = self.cfg.influence.alpha
        if self.variant == infl.COMM:
            env_rewards = np.array([en.e + en.r_env_intrinsic for en in seg])
        else:
            env_rewards = np.array([alpha * en.e + en.r_env_intrinsic for en in seg])
        env_returns = policy.discounted_returns(
            env_rewards, hyper.gamma, boot.value if boot else 0.0)
        batch = RolloutBatch(
            windows=np.stack([en.window for en in seg]),
            extras=np.stack([en.extras for en in seg]),
            h0=seg[0].h_pre,
            actions=np.array([en.action for en in seg]),
            env_returns=env_returns,
            env_advantages=env_returns - np.array([en.value for en in seg]),
        )
        if self.spec.comm:
            msg_rewards = np.array([alpha * en.e + en.r_msg_intrinsic for en in seg])
            batch.messages = np.array([en.message for en in seg])
            batch.msg_returns = policy.discounted_returns(
                msg_rewards, hyper.gamma, boot.msg_value if boot else 0.0)
            batch.msg_advantages = batch.msg_returns - np.array(
                [en.msg_value for en in seg])
        if self.spec.moa:
            batch.moa_extras = np.stack([en.moa_extras for en in seg])
            batch.moa_h0 = seg[0].moa_h_pre
            batch.moa_targets = np.stack([en.moa_target for en in seg])
            mask = np.stack([en.moa_mask for en in seg])
            if terminal:
                mask[-1, :] = False   # final step has no next-action target
            batch.moa_mask = mask
        runtime = self.agents[agent_i]
        report, grads = policy.loss_and_grad(
            runtime.snapshot, self.spec, batch, hyper,
            moa_weight=self.cfg.moa.loss_weight if self.spec.moa else None)
        with self.lock:
            lr = hyper.lr_at(self.global_step)
            policy.apply_grads(runtime.params, grads, lr, hyper, runtime.opt)
        runtime.refresh_snapshot()
        del buf[: len(seg)]
        return report

    # -- run ---------------------------------------------------------------------

    def train(self, out_dir: Path | None = None) -> RunResult:
        cfg = self.cfg
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "config.txt").write_text(format_config(cfg))
        try:
            if cfg.train.workers <= 1:
                w = self._make_worker(0)
                while self.global_step < cfg.train.total_steps:
                    self.step_once(w)
                workers = [w]
            else:
                workers = [self._make_worker(i) for i in range(cfg.train.workers)]
                threads = [threading.Thread(target=self._worker_loop, args=(w,))
                           for w in workers]
                for t in threads:
                    t.start()
                for t in threads:
                    t.join()
        except NumericError:
            if out_dir is not None:
                checkpoint.save_agents(out_dir / "checkpoint.ntc",
                                       [a.params for a in self.agents])
            raise
        log = self._collect_log(workers)
        summaries = summarize(log, cfg.train.metrics_window,
                              n_actions=self.env.n_actions,
                              n_symbols=cfg.comm_symbols)
        if out_dir is not None:
            runio.write_trajectory(out_dir / "trajectory.csv", log)
            runio.write_metrics(out_dir / "metrics.csv", summaries)
            checkpoint.save_agents(out_dir / "checkpoint.ntc",
                                   [a.params for a in self.agents])
        return RunResult(seed=self.seed, out_dir=out_dir, log=log,
                         summaries=summaries,
                         final_params=[a.params for a in self.agents])

    def _worker_loop(self, w: WorkerState):
        while True:
            with self.lock:
                if self.global_step >= self.cfg.train.total_steps:
                    return
            self.step_once(w)

    def _collect_log(self, workers: list[WorkerState]) -> TrajectoryLog:
        want_recv = self.cfg.influence.log_pairwise
        parts = [w.log for w in workers if w.log["steps"]]
        if not parts:
            empty_i = np.zeros((0, self.n), dtype=np.int64)
            empty_f = np.zeros((0, self.n))
            return TrajectoryLog(
                steps=np.zeros(0, dtype=np.int64),
                episodes=np.zeros(0, dtype=np.int64),
                actions=empty_i, messages=empty_i, extrinsic=empty_f,
                influence=empty_f, values=empty_f, visible=empty_i,
                received=empty_f if want_recv else None)
        return TrajectoryLog(
            steps=np.concatenate([np.array(p["steps"], dtype=np.int64) for p in parts]),
            episodes=np.concatenate([np.array(p["episodes"], dtype=np.int64) for p in parts]),
            actions=np.concatenate([np.stack(p["actions"]) for p in parts]),
            messages=np.concatenate([np.stack(p["messages"]) for p in parts]),
            extrinsic=np.concatenate([np.stack(p["e"]) for p in parts]),
            influence=np.concatenate([np.stack(p["c"]) for p in parts]),
            values=np.concatenate([np.stack(p["values"]) for p in parts]),
            visible=np.concatenate([np.stack(p["visible"]) for p in parts]),
            received=(np.concatenate([np.stack(p["recv"]) for p in parts])
                      if want_recv else None),
        )


def run_experiment(cfg: ExperimentConfig) -> list[RunResult]:
    """Train one run per seed; writes artifacts when run.out is set."""
    results = []
    base = Path(cfg.run.out) if cfg.run.out else None
    for seed in cfg.run.seeds:
        runner = Runner(cfg, seed)
        out_dir = base / f"seed_{seed}" if base else None
        results.append(runner.train(out_dir))
    return results


def evaluate(agent_params: list[dict[str, np.ndarray]], cfg: ExperimentConfig,
             episodes: int, seed: int = 0) -> list[EpisodeSummary]:
    """Frozen-policy rollouts with full per-episode metrics; no updates."""
    runner = Runner(cfg, seed, agent_params=agent_params, training=False)
    w = runner._make_worker(0)
    summaries = []
    for _ in range(episodes):
        start = runner.global_step
        while not runner.step_once(w):
            pass
        opened = w.last_box_opened
        log = runner._collect_log([w])
        chunk = log.slice_rows((log.steps >= start) & (log.steps < runner.global_step))
        summary = window_summary(chunk, start, n_actions=runner.env.n_actions,
                                 n_symbols=cfg.comm_symbols)
        summary.metrics["box_opened"] = 0.0 if opened is None else 1.0
        summary.metrics["box_open_step"] = float("nan") if opened is None else float(opened)
        summaries.append(summary)
    return summaries
