"""Training losses.

Two losses drive the system and share one tape:

* the TD loss: squared one-step errors of the mixed global value against a
  bootstrapped target from a delayed parameter copy, summed over every step
  of every trajectory in the batch and divided by the total step count;
* the container loss: the same TD term plus a squared hinge that pulls the
  batch-average KL divergence between this container's Boltzmann policy and
  the average of all containers' policies toward a target value:

      L = L_TD + beta * (mean_KL - lambda)^2,
      mean_KL = (1/|B|) * sum_traj sum_t sum_agents KL(pi_own || mean_pi)

Sibling policies are replayed from head snapshots over the same recorded
observations; since the lower layers are byte-identical across containers
between broadcasts, the shared trunk is evaluated once and each sibling head
is applied to its hidden states.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nets import QNetwork, ParamSet
from .replay import Trajectory


@dataclass
class PaddedBatch:
    """Episodes padded to a common length with a validity mask."""

    obs: np.ndarray  # (B, T+1, n, obs_dim)
    state: np.ndarray  # (B, T+1, S)
    avail: np.ndarray  # (B, T+1, n, A)
    actions: np.ndarray  # (B, T, n)
    rewards: np.ndarray  # (B, T)
    terminated: np.ndarray  # (B, T)
    mask: np.ndarray  # (B, T)
    lengths: np.ndarray  # (B,)

    @property
    def batch_size(self) -> int:
        return self.obs.shape[0]

    @property
    def max_t(self) -> int:
        return self.actions.shape[1]

    @property
    def total_steps(self) -> float:
        return float(self.mask.sum())

    @classmethod
    def from_trajectories(cls, trajs: list[Trajectory]) -> "PaddedBatch":
        b = len(trajs)
        t_max = max(t.length for t in trajs)
        _, n, od = trajs[0].obs.shape
        sd = trajs[0].state.shape[1]
        a = trajs[0].avail.shape[2]
        obs = np.zeros((b, t_max + 1, n, od))
        state = np.zeros((b, t_max + 1, sd))
        avail = np.zeros((b, t_max + 1, n, a))
        avail[:, :, :, 0] = 1.0  # padded steps keep one legal action
        actions = np.zeros((b, t_max, n), dtype=np.int64)
        rewards = np.zeros((b, t_max))
        terminated = np.zeros((b, t_max))
        mask = np.zeros((b, t_max))
        lengths = np.zeros(b, dtype=np.int64)
        for k, tr in enumerate(trajs):
            t = tr.length
            obs[k, : t + 1] = tr.obs
            state[k, : t + 1] = tr.state
            avail[k, : t + 1] = tr.avail
            actions[k, :t] = tr.actions
            rewards[k, :t] = tr.rewards
            terminated[k, :t] = tr.terminated
            mask[k, :t] = 1.0
            lengths[k] = t
        return cls(obs, state, avail, actions, rewards, terminated, mask, lengths)

    def agent_inputs(self) -> np.ndarray:
        """Network inputs per step: observation ++ previous-action one-hot.

        Returns (T+1, B*n, obs_dim + A); index t holds the input used to
        evaluate Q at time t (previous action is zero at t=0).
        """
        b, tp1, n, od = self.obs.shape
        a = self.avail.shape[3]
        onehot = np.zeros((b, tp1, n, a))
        t_max = self.max_t
        for t in range(t_max):
            onehot[np.arange(b)[:, None], t + 1, np.arange(n)[None, :], self.actions[:, t]] = 1.0
        x = np.concatenate([self.obs, onehot], axis=3)
        return x.transpose(1, 0, 2, 3).reshape(tp1, b * n, od + a)


def chosen_onehot(batch: PaddedBatch) -> np.ndarray:
    """(T, B*n, A) one-hot of the recorded action at each step."""
    b, t_max, n = batch.actions.shape
    a = batch.avail.shape[3]
    out = np.zeros((t_max, b * n, a))
    flat = batch.actions.transpose(1, 0, 2).reshape(t_max, b * n)
    out[np.arange(t_max)[:, None], np.arange(b * n)[None, :], flat] = 1.0
    return out


def unroll_values(
    qnet: QNetwork, params: Mapping[str, Tensor] | ParamSet, batch: PaddedBatch, steps: int
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Graph-free unroll: per-step Q values and trunk hidden states."""
    inputs = batch.agent_inputs()
    b = batch.batch_size
    n = qnet.n_agents
    with ad.no_grad():
        h = ad.constant(qnet.agent.initial_state(b * n))
        qs, hiddens = [], []
        for t in range(steps):
            hidden = qnet.agent.trunk(params, ad.constant(inputs[t]), h)
            q = qnet.agent.head(params, hidden)
            qs.append(q.value)
            hiddens.append(hidden.value)
            h = hidden
    return qs, hiddens


def build_targets(
    qnet: QNetwork, target_params: ParamSet, batch: PaddedBatch, gamma: float
) -> np.ndarray:
    """Bootstrapped targets y_t = r_t + gamma * (1-done_t) * Qtot'(s_{t+1}).

    The target network picks its own greedy legal action per agent at t+1
    and mixes with the target mixer; terminal steps drop the bootstrap.
    """
    b, t_max = batch.rewards.shape
    n, a = qnet.n_agents, qnet.n_actions
    qs, _ = unroll_values(qnet, target_params, batch, t_max + 1)
    avail = batch.avail.transpose(1, 0, 2, 3).reshape(t_max + 1, b * n, a)
    y = np.array(batch.rewards)
    with ad.no_grad():
        for t in range(t_max):
            cont = (1.0 - batch.terminated[:, t]) * batch.mask[:, t]
            if not cont.any():
                continue
            nq = np.where(avail[t + 1] > 0, qs[t + 1], -np.inf)
            greedy = nq.max(axis=1).reshape(b, n)
            qtot = qnet.mixer.forward(
                target_params, ad.constant(greedy), ad.constant(batch.state[:, t + 1])
            ).value
            y[:, t] += gamma * cont * qtot
    return y


def combined_loss(
    qnet: QNetwork,
    params: ParamSet,
    batch: PaddedBatch,
    targets: np.ndarray,
    beta: float = 0.0,
    kl_target: float = 0.0,
    temperature: float = 1.0,
    sibling_heads: list[dict[str, np.ndarray]] | None = None,
) -> tuple[Tensor, dict]:
    """Build the taped loss; returns (loss node, metrics).

    With ``beta == 0`` this is exactly the TD loss. Otherwise
    ``sibling_heads`` must hold the head blocks of all N containers
    (including this one's own snapshot position); the container average
    policy uses the live own policy plus the remaining snapshots.
    """
    b, t_max = batch.rewards.shape
    n, a = qnet.n_agents, qnet.n_actions
    inputs = batch.agent_inputs()
    chosen = chosen_onehot(batch)
    avail = batch.avail.transpose(1, 0, 2, 3).reshape(t_max + 1, b * n, a)
    mask_bt = batch.mask

    td_sum: Tensor | None = None
    kl_sum: Tensor | None = None
    h: Tensor = ad.constant(qnet.agent.initial_state(b * n))

    for t in range(t_max):
        hidden = qnet.agent.trunk(params, ad.constant(inputs[t]), h)
        q = qnet.agent.head(params, hidden)

        q_taken = (q * ad.constant(chosen[t])).sum(axis=1).reshape(b, n)
        qtot = qnet.mixer.forward(params, q_taken, ad.constant(batch.state[:, t]))
        err = (qtot - ad.constant(targets[:, t])) * ad.constant(mask_bt[:, t])
        step_td = (err * err).sum()
        td_sum = step_td if td_sum is None else td_sum + step_td

        if beta != 0.0 and sibling_heads is not None and len(sibling_heads) > 1:
            legal = (avail[t] > 0).astype(np.float64)

            def legal_softmax(q_vals: Tensor) -> Tensor:
                z = ad.where_const(legal > 0, q_vals / temperature, -np.inf)
                z = z - ad.constant(z.value.max(axis=1, keepdims=True))
                e = ad.exp(z)
                return e / e.sum(axis=1, keepdims=True)

            pi_own = legal_softmax(q)
            # sibling heads are constants, but their policies still run
            # through the live shared trunk: the shared block is one and the
            # same parameter set across containers, so the divergence is a
            # function of it too
            n_policies = len(sibling_heads)
            own_count = sum(1 for head in sibling_heads if head is None)
            mean_pi = pi_own * own_count
            for head in sibling_heads:
                if head is None:
                    continue
                q_sib = hidden @ ad.constant(head["agent.fc_out.w"]) + ad.constant(
                    head["agent.fc_out.b"]
                )
                mean_pi = mean_pi + legal_softmax(q_sib)
            mean_pi = mean_pi / n_policies

            illegal = 1.0 - legal
            log_own = ad.log(pi_own + ad.constant(illegal))
            log_mean = ad.log(mean_pi + ad.constant(illegal))
            kl_step = (pi_own * (log_own - log_mean) * ad.constant(legal)).sum(axis=1)
            kl_step = (kl_step.reshape(b, n) * ad.constant(mask_bt[:, t : t + 1])).sum()
            kl_sum = kl_step if kl_sum is None else kl_sum + kl_step

        h = hidden

    td_loss = td_sum * (1.0 / batch.total_steps)
    info = {"td_loss": float(td_loss.value), "kl_mean": 0.0, "diversity_term": 0.0}
    if beta == 0.0:
        return td_loss, info

    if sibling_heads is None or len(sibling_heads) <= 1:
        kl_mean: Tensor = ad.constant(0.0)
    else:
        kl_mean = kl_sum * (1.0 / b)
    hinge = (kl_mean - kl_target) * (kl_mean - kl_target)
    loss = td_loss + beta * hinge
    info["kl_mean"] = float(kl_mean.value) if isinstance(kl_mean, Tensor) else 0.0
    info["diversity_term"] = float(beta * hinge.value)
    return loss, info


def kl_vs_mean(pi_own: np.ndarray, others: list[np.ndarray]) -> float:
    """KL(pi_own || average of [pi_own] + others), for diagnostics/tests."""
    mean = (pi_own + sum(others)) / (1 + len(others))
    support = pi_own > 0
    return float(np.sum(pi_own[support] * (np.log(pi_own[support]) - np.log(mean[support]))))
