"""Agent Q-networks, the monotonic mixer, and their parameter bookkeeping.

Network shape: each agent runs a three-layer recurrent Q-network (linear ->
GRU -> linear). Agents inside one policy share all weights. Parameters are
split into named blocks:

* ``agent.fc_in.*`` and ``agent.gru.*`` -- the shared lower two layers,
  broadcast from the central learner to every container;
* ``agent.fc_out.*`` -- the per-container head, trained locally;
* ``mixer.*`` -- the state-conditioned monotonic mixing network.

The mixer mixes per-agent chosen Q values into a scalar with non-negative
(hypernetwork-generated, absolute-valued) weights, so the global value is
nondecreasing in every local value.
"""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError

HIDDEN_DIM = 64
MIXING_DIM = 32

SHARED_PREFIXES = ("agent.fc_in.", "agent.gru.")
HEAD_PREFIX = "agent.fc_out."
MIXER_PREFIX = "mixer."


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ParamSet:
    """An ordered, named collection of trainable leaf tensors."""

    def __init__(self, params: Mapping[str, np.ndarray] | None = None):
        self._params: dict[str, Tensor] = {}
        if params:
            for name, value in params.items():
                self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        t = ad.parameter(np.array(value, dtype=np.float64), name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def block_names(self, prefixes: str | Iterable[str]) -> list[str]:
        if isinstance(prefixes, str):
            prefixes = (prefixes,)
        return [n for n in self._params if any(n.startswith(p) for p in prefixes)]

    def to_arrays(self, names: Iterable[str] | None = None) -> dict[str, np.ndarray]:
        names = self.names() if names is None else list(names)
        return {n: self._params[n].value.copy() for n in names}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, value in arrays.items():
            t = self._params.get(name)
            if t is None:
                raise ConfigurationError(f"unknown parameter {name!r}")
            value = np.asarray(value, dtype=np.float64)
            if value.shape != t.value.shape:
                raise ConfigurationError(
                    f"shape mismatch for {name!r}: {value.shape} vs {t.value.shape}"
                )
            t.value = value.copy()

    def clone(self) -> "ParamSet":
        return ParamSet(self.to_arrays())

    def copy_from(self, other: "ParamSet", names: Iterable[str] | None = None) -> None:
        self.load_arrays(other.to_arrays(names))

    def flat(self) -> np.ndarray:
        return np.concatenate([t.value.ravel() for t in self._params.values()] or [np.zeros(0)])

    def load_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        offset = 0
        for t in self._params.values():
            n = t.value.size
            t.value = vec[offset : offset + n].reshape(t.value.shape).copy()
            offset += n
        if offset != vec.size:
            raise ConfigurationError(f"flat vector length {vec.size}, expected {offset}")

    def equal_bytes(self, other: "ParamSet", names: Iterable[str] | None = None) -> bool:
        names = self.names() if names is None else list(names)
        return all(
            self._params[n].value.tobytes() == other._params[n].value.tobytes() for n in names
        )


# -- layer primitives ------------------------------------------------------------


def linear_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """y = xW + b for a batch of row vectors."""
    if x.shape[-1] != weights.shape[0]:
        raise ConfigurationError(
            f"linear_forward: inner dimensions disagree ({x.shape} @ {weights.shape})"
        )
    if weights.shape[1] != bias.shape[-1]:
        raise ConfigurationError(
            f"linear_forward: bias length {bias.shape} does not match output {weights.shape}"
        )
    return x @ weights + bias


def gru_step(x: Tensor, h: Tensor, p: Mapping[str, Tensor], prefix: str = "agent.gru.") -> Tensor:
    """One step of a standard three-gate GRU.

    Update gate z, reset gate r, candidate c:
        z = sigmoid(x Wxz + h Whz + bz)
        r = sigmoid(x Wxr + h Whr + br)
        c = tanh(x Wxc + (r*h) Whc + bc)
        h' = z*h + (1-z)*c

    A strongly positive update-gate bias therefore keeps the previous hidden
    state. With |h| <= 1 the output stays in (-1, 1) elementwise.
    """
    if x.shape[-1] != p[prefix + "w_xz"].shape[0]:
        raise ConfigurationError(
            f"gru_step: input width {x.shape} does not match {p[prefix + 'w_xz'].shape}"
        )
    z = ad.sigmoid(x @ p[prefix + "w_xz"] + h @ p[prefix + "w_hz"] + p[prefix + "b_z"])
    r = ad.sigmoid(x @ p[prefix + "w_xr"] + h @ p[prefix + "w_hr"] + p[prefix + "b_r"])
    c = ad.tanh(x @ p[prefix + "w_xc"] + (r * h) @ p[prefix + "w_hc"] + p[prefix + "b_c"])
    return z * h + (1.0 - z) * c


# -- agent network ----------------------------------------------------------------


class AgentNet:
    """Shared recurrent Q-network: linear -> GRU -> linear head.

    The network input is the agent observation concatenated with a one-hot of
    the agent's previous action (zeros on the first step of an episode).
    """

    def __init__(self, obs_dim: int, n_actions: int, hidden_dim: int = HIDDEN_DIM):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden_dim = hidden_dim
        self.input_dim = obs_dim + n_actions

    def init_params(self, params: ParamSet, rng: np.random.Generator) -> None:
        i, h, a = self.input_dim, self.hidden_dim, self.n_actions
        params.add("agent.fc_in.w", init_uniform(rng, (i, h), i))
        params.add("agent.fc_in.b", init_uniform(rng, (h,), i))
        for gate in ("z", "r", "c"):
            params.add(f"agent.gru.w_x{gate}", init_uniform(rng, (h, h), h))
            params.add(f"agent.gru.w_h{gate}", init_uniform(rng, (h, h), h))
            params.add(f"agent.gru.b_{gate}", init_uniform(rng, (h,), h))
        params.add("agent.fc_out.w", init_uniform(rng, (h, a), h))
        params.add("agent.fc_out.b", init_uniform(rng, (a,), h))

    def initial_state(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.hidden_dim))

    def trunk(self, params: Mapping[str, Tensor], x: Tensor, h: Tensor) -> Tensor:
        """Shared lower two layers: new GRU hidden state for the batch."""
        if x.shape[-1] != self.input_dim:
            raise ConfigurationError(
                f"agent input width {x.shape[-1]}, expected {self.input_dim}"
            )
        z = ad.relu(linear_forward(x, params["agent.fc_in.w"], params["agent.fc_in.b"]))
        return gru_step(z, h, params)

    def head(self, params: Mapping[str, Tensor], hidden: Tensor) -> Tensor:
        return linear_forward(hidden, params["agent.fc_out.w"], params["agent.fc_out.b"])

    def forward(
        self, params: Mapping[str, Tensor], x: Tensor, h: Tensor
    ) -> tuple[Tensor, Tensor]:
        """Advance one step: (q_values, new_hidden) for a batch of agents."""
        hidden = self.trunk(params, x, h)
        return self.head(params, hidden), hidden


def agent_q(
    net: AgentNet,
    params: Mapping[str, Tensor],
    obs: np.ndarray,
    last_action_onehot: np.ndarray,
    hidden: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Convenience acting-path evaluation (no graph): returns arrays."""
    with ad.no_grad():
        x = ad.constant(np.concatenate([obs, last_action_onehot], axis=-1))
        q, h = net.forward(params, x, ad.constant(hidden))
    return q.value, h.value


# -- monotonic mixer ---------------------------------------------------------------


class MonotonicMixer:
    """State-conditioned monotonic combination of per-agent Q values.

    Linear hypernetworks generate the mixing weights from the global state;
    absolute values keep every weight non-negative so dQ_tot/dq_i >= 0. One
    hidden mixing layer of width ``embed_dim`` with ELU, plus a two-layer
    state bias on the output.
    """

    def __init__(self, n_agents: int, state_dim: int, embed_dim: int = MIXING_DIM):
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.embed_dim = embed_dim

    def init_params(self, params: ParamSet, rng: np.random.Generator) -> None:
        n, s, e = self.n_agents, self.state_dim, self.embed_dim
        params.add("mixer.w1.w", init_uniform(rng, (s, n * e), s))
        params.add("mixer.w1.b", init_uniform(rng, (n * e,), s))
        params.add("mixer.b1.w", init_uniform(rng, (s, e), s))
        params.add("mixer.b1.b", init_uniform(rng, (e,), s))
        params.add("mixer.w2.w", init_uniform(rng, (s, e), s))
        params.add("mixer.w2.b", init_uniform(rng, (e,), s))
        params.add("mixer.v.w1", init_uniform(rng, (s, e), s))
        params.add("mixer.v.b1", init_uniform(rng, (e,), s))
        params.add("mixer.v.w2", init_uniform(rng, (e, 1), e))
        params.add("mixer.v.b2", init_uniform(rng, (1,), e))

    def forward(self, params: Mapping[str, Tensor], q_locals: Tensor, state: Tensor) -> Tensor:
        """Mix (B, n_agents) local values with (B, state_dim) states -> (B,)."""
        if q_locals.shape[-1] != self.n_agents:
            raise ConfigurationError(
                f"mixer expects {self.n_agents} agent values, got {q_locals.shape}"
            )
        b = q_locals.shape[0]
        w1 = ad.absolute(linear_forward(state, params["mixer.w1.w"], params["mixer.w1.b"]))
        w1 = w1.reshape(b, self.n_agents, self.embed_dim)
        b1 = linear_forward(state, params["mixer.b1.w"], params["mixer.b1.b"])
        hidden = ad.elu(ad.bvm(q_locals, w1) + b1)
        w2 = ad.absolute(linear_forward(state, params["mixer.w2.w"], params["mixer.w2.b"]))
        v = ad.relu(linear_forward(state, params["mixer.v.w1"], params["mixer.v.b1"]))
        v = linear_forward(v, params["mixer.v.w2"], params["mixer.v.b2"])
        return (hidden * w2).sum(axis=1) + v.reshape(b)


class QNetwork:
    """Agent network plus mixer, with one ParamSet covering both."""

    def __init__(
        self,
        obs_dim: int,
        n_actions: int,
        n_agents: int,
        state_dim: int,
        hidden_dim: int = HIDDEN_DIM,
        mixing_dim: int = MIXING_DIM,
    ):
        self.agent = AgentNet(obs_dim, n_actions, hidden_dim)
        self.mixer = MonotonicMixer(n_agents, state_dim, mixing_dim)
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.obs_dim = obs_dim
        self.state_dim = state_dim

    def init_params(self, seed_or_rng) -> ParamSet:
        rng = (
            seed_or_rng
            if isinstance(seed_or_rng, np.random.Generator)
            else np.random.default_rng(seed_or_rng)
        )
        params = ParamSet()
        self.agent.init_params(params, rng)
        self.mixer.init_params(params, rng)
        return params

    @staticmethod
    def shared_names(params: ParamSet) -> list[str]:
        return params.block_names(SHARED_PREFIXES)

    @staticmethod
    def head_names(params: ParamSet) -> list[str]:
        return params.block_names(HEAD_PREFIX)

    @staticmethod
    def mixer_names(params: ParamSet) -> list[str]:
        return params.block_names(MIXER_PREFIX)
