"""Adaptive hop control: a REINFORCE-trained binary halting policy and ACT.

The policy sees, after every hop, the Bhattacharyya distance between the
current and previous attention distributions (one per head) and a one-hot of
the hop index.  A GRU integrates those observations; a one-hidden-layer MLP
reads out a state value and the logit of *continuing* for one more hop.

Controllers plug into :func:`memonet.model.run_episode` through three calls:
``step(weights, t, active) -> continue mask``, ``combine(answers, hops)`` and
``record()``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from memonet import autodiff as ad
from memonet import kernels
from memonet.autodiff import Value
from memonet.errors import ConfigError, ContractError, DimensionError

COEF_FLOOR = 1e-12
ACT_EPSILON = 0.01


def bhattacharyya(p, q) -> float:
    """-ln(sum_i sqrt(p_i q_i)), the coefficient clamped at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise DimensionError(f"bhattacharyya: shapes {p.shape} and {q.shape} differ")
    return float(kernels.bhattacharyya_rows(p[None, :].copy(), q[None, :].copy(), COEF_FLOOR)[0])


@dataclass
class HaltObservation:
    distances: np.ndarray  # (B, H)
    step_onehot: np.ndarray  # (B, N)

    @property
    def features(self) -> np.ndarray:
        return np.concatenate([self.distances, self.step_onehot], axis=-1)


def build_observation(W_t, W_prev, t: int, n_hops: int) -> HaltObservation:
    """Distances to the previous hop's attention (uniform before the first hop)."""
    W_t = np.asarray(W_t, dtype=np.float64)
    squeeze = W_t.ndim == 2
    if squeeze:
        W_t = W_t[None]
    if not 0 <= t < n_hops:
        raise ContractError(f"hop index {t} outside [0, {n_hops})")
    B, H, I = W_t.shape
    if W_prev is None:
        W_prev = np.full_like(W_t, 1.0 / I)
    else:
        W_prev = np.asarray(W_prev, dtype=np.float64).reshape(W_t.shape)
    dist = kernels.bhattacharyya_rows(
        np.ascontiguousarray(W_t.reshape(B * H, I)),
        np.ascontiguousarray(W_prev.reshape(B * H, I)), COEF_FLOOR).reshape(B, H)
    onehot = np.zeros((B, n_hops))
    onehot[:, t] = 1.0
    if squeeze:
        return HaltObservation(dist[0], onehot[0])
    return HaltObservation(dist, onehot)


class PolicyParams:
    """GRU (hidden ``Z``) followed by an MLP with one hidden layer.

    The final layer starts with zero weights and bias ``(0, bias_init)`` for
    ``(value, continue-logit)``, so a fresh policy continues with probability
    exactly ``sigmoid(bias_init)``.
    """

    def __init__(self, tensors: dict[str, Value], obs_dim: int, hidden: int, mlp_hidden: int,
                 bias_init: float):
        self.tensors = tensors
        self.obs_dim = obs_dim
        self.hidden = hidden
        self.mlp_hidden = mlp_hidden
        self.bias_init = bias_init

    @classmethod
    def init(cls, obs_dim: int, rng: np.random.Generator, hidden: int = 256,
             mlp_hidden: int = 64, bias_init: float = 5.0) -> "PolicyParams":
        Z, F, M = hidden, obs_dim, mlp_hidden

        def u(shape, fan_in):
            b = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-b, b, size=shape)

        raw = {
            "gru/W_x": u((3 * Z, F), F),
            "gru/W_z": u((3 * Z, Z), Z),
            "gru/b_x": np.zeros(3 * Z),
            "gru/b_z": np.zeros(3 * Z),
            "mlp/W_1": u((M, Z), Z),
            "mlp/b_1": np.zeros(M),
            "mlp/W_2": np.zeros((2, M)),
            "mlp/b_2": np.array([0.0, float(bias_init)]),
        }
        tensors = {k: Value(v, requires_grad=True, name=k) for k, v in raw.items()}
        return cls(tensors, obs_dim, hidden, mlp_hidden, bias_init)

    def __getitem__(self, name):
        return self.tensors[name]

    def values(self) -> list[Value]:
        return list(self.tensors.values())

    def zero_grad(self) -> None:
        for v in self.tensors.values():
            v.zero_grad()

    def meta(self) -> dict:
        return {"obs_dim": self.obs_dim, "hidden": self.hidden,
                "mlp_hidden": self.mlp_hidden, "bias_init": self.bias_init}


def policy_step(obs, z_prev, params: PolicyParams):
    """One GRU update and MLP readout: returns ``(z, value, logit, h)``."""
    x = ad.as_value(obs)
    z_prev = ad.as_value(z_prev)
    if x.shape[-1] != params.obs_dim:
        raise DimensionError(f"observation width {x.shape[-1]}, policy expects {params.obs_dim}")
    Z = params.hidden
    gx = ad.add(ad.matmul(x, ad.transpose(params["gru/W_x"])), params["gru/b_x"])
    gz = ad.add(ad.matmul(z_prev, ad.transpose(params["gru/W_z"])), params["gru/b_z"])
    sl = (Ellipsis,)
    r = ad.sigmoid(ad.add(ad.take(gx, sl + (slice(0, Z),)), ad.take(gz, sl + (slice(0, Z),))))
    u = ad.sigmoid(ad.add(ad.take(gx, sl + (slice(Z, 2 * Z),)),
                          ad.take(gz, sl + (slice(Z, 2 * Z),))))
    n = ad.tanh(ad.add(ad.take(gx, sl + (slice(2 * Z, 3 * Z),)),
                       ad.mul(r, ad.take(gz, sl + (slice(2 * Z, 3 * Z),)))))
    z = ad.add(n, ad.mul(u, ad.sub(z_prev, n)))
    hid = ad.relu(ad.add(ad.matmul(z, ad.transpose(params["mlp/W_1"])), params["mlp/b_1"]))
    out = ad.add(ad.matmul(hid, ad.transpose(params["mlp/W_2"])), params["mlp/b_2"])
    value = ad.take(out, sl + (0,))
    logit = ad.take(out, sl + (1,))
    return z, value, logit, ad.sigmoid(logit)


def sample_action(h, training: bool, rng: np.random.Generator | None = None) -> np.ndarray:
    """True = take another hop.  Bernoulli(h) in training, ``h >= 0.5`` otherwise."""
    h = np.asarray(h, dtype=np.float64)
    if training:
        if rng is None:
            raise ContractError("stochastic halting needs an explicit generator")
        return rng.random(h.shape) < h
    return h >= 0.5


# ---------------------------------------------------------------- controllers


class _SelectAnswer:
    """Answer of each entry at its own halting hop (differentiable mask-sum)."""

    def combine(self, answers, hops):
        B = answers[0].shape[0]
        total = None
        for t, a in enumerate(answers):
            m = (hops == t + 1).astype(np.float64)
            if not m.any():
                continue
            term = ad.mul(a, m[:, None]) if not m.all() else a
            total = term if total is None else ad.add(total, term)
        if total is None:
            raise ContractError(f"no batch entry halted within {len(answers)} hops (B={B})")
        return total


class FixedHops:
    """Always take exactly ``k`` hops (capped by the episode's max)."""

    name = "fixed"

    def __init__(self, k: int):
        if k < 1:
            raise ConfigError("fixed hop count must be >= 1")
        self.k = k

    def begin(self, B, n_hops, training, rng):
        return _FixedCtl(self.k)


class _FixedCtl(_SelectAnswer):
    def __init__(self, k):
        self.k = k

    def step(self, weights, t, active):
        return np.full(weights.shape[0], t + 1 < self.k)

    def record(self):
        return None


class NeverHalt(FixedHops):
    """Hop until the cap."""

    name = "never"

    def __init__(self):
        self.k = np.iinfo(np.int64).max


def AlwaysHalt() -> FixedHops:
    return FixedHops(1)


@dataclass
class HaltRecord:
    """Rollout of the halting policy over one batch of episodes.

    Arrays are indexed ``[t, b]``.  ``visited`` marks hops an episode actually
    took; ``decided`` drops the forced halt at the cap.
    """

    obs: np.ndarray  # (T, B, F)
    actions: np.ndarray  # (T, B) 1 = continue
    visited: np.ndarray
    decided: np.ndarray
    h: np.ndarray
    values: np.ndarray

    @property
    def steps(self) -> int:
        return self.obs.shape[0]


class ReinforceHalting:
    """Stochastic continue/halt decisions from a :class:`PolicyParams`."""

    name = "reinforce"

    def __init__(self, policy: PolicyParams):
        self.policy = policy

    def begin(self, B, n_hops, training, rng):
        return _ReinforceCtl(self.policy, B, n_hops, training, rng)


class _ReinforceCtl(_SelectAnswer):
    def __init__(self, policy, B, n_hops, training, rng):
        self.policy = policy
        self.n_hops = n_hops
        self.training = training
        self.rng = rng
        self.z = Value(np.zeros((B, policy.hidden)))
        self.prev = None
        self.rows = []

    def step(self, weights, t, active):
        obs = build_observation(weights, self.prev, t, self.n_hops).features
        self.prev = weights
        with ad.no_grad():
            self.z, value, _, h = policy_step(obs, self.z, self.policy)
        forced = t == self.n_hops - 1
        if forced:
            cont = np.zeros(len(active), dtype=bool)
        else:
            cont = sample_action(h.data, self.training, self.rng)
        self.rows.append((obs, cont.astype(np.float64), active.copy(),
                          active & (not forced), h.data.copy(), value.data.copy()))
        return cont

    def record(self) -> HaltRecord:
        cols = list(zip(*self.rows))
        return HaltRecord(*(np.stack(c) for c in cols))


def episode_returns(record: HaltRecord, rewards, gamma: float, horizon: int = 0,
                    values=None) -> np.ndarray:
    """n-step returns per visited step; reward lands on each episode's last hop.

    ``horizon <= 0`` uses the full remaining episode.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = record.values if values is None else values
    T, B = record.visited.shape
    out = np.zeros((T, B))
    for b in range(B):
        L = int(record.visited[:, b].sum())
        if L == 0:
            continue
        r = np.zeros(L)
        r[-1] = rewards[b]
        out[:L, b] = kernels.nstep_returns(r, np.ascontiguousarray(values[:L, b]),
                                           float(gamma), int(horizon))
    return out


@dataclass
class HaltLoss:
    total: Value
    policy: float
    value: float
    hop: float
    returns: np.ndarray


def reinforce_loss(record: HaltRecord, rewards, policy: PolicyParams, alpha: float,
                   beta: float, gamma: float, horizon: int = 0,
                   hop_sign: float = 1.0) -> HaltLoss:
    """``L_pi + alpha L_V + beta L_Hop`` averaged over the batch's episodes.

    The policy is re-run over the recorded observations so that gradients
    reach policy parameters only; advantages and return targets are
    constants.  ``hop_sign=+1`` penalises the summed continue-probability
    (fewer hops); ``-1`` is the literally printed variant.
    """
    if record is None or record.steps == 0 or not record.visited.any():
        raise ContractError("reinforce_loss needs a terminated, non-empty episode")
    T, B = record.visited.shape
    z = Value(np.zeros((B, policy.hidden)))
    vals, logps, hs = [], [], []
    for t in range(T):
        z, v, logit, h = policy_step(record.obs[t], z, policy)
        a = record.actions[t]
        logp = ad.add(ad.mul(ad.log_sigmoid(logit), a),
                      ad.mul(ad.log_sigmoid(ad.scale(logit, -1.0)), 1.0 - a))
        vals.append(v)
        logps.append(logp)
        hs.append(h)
    v_now = np.stack([v.data for v in vals])
    R = episode_returns(record, rewards, gamma, horizon, values=v_now)
    adv = R - v_now
    vis = record.visited.astype(np.float64)
    dec = record.decided.astype(np.float64)
    l_pi = l_v = l_hop = None
    for t in range(T):
        lp = ad.reduce_sum(ad.mul(logps[t], -dec[t] * adv[t]))
        err = ad.sub(vals[t], R[t])
        lv = ad.reduce_sum(ad.mul(ad.square(err), vis[t]))
        lh = ad.reduce_sum(ad.mul(hs[t], dec[t]))
        l_pi = lp if l_pi is None else ad.add(l_pi, lp)
        l_v = lv if l_v is None else ad.add(l_v, lv)
        l_hop = lh if l_hop is None else ad.add(l_hop, lh)
    inv_b = 1.0 / B
    l_pi, l_v, l_hop = ad.scale(l_pi, inv_b), ad.scale(l_v, inv_b), ad.scale(l_hop, inv_b)
    total = ad.add(ad.add(l_pi, ad.scale(l_v, alpha)), ad.scale(l_hop, beta * hop_sign))
    return HaltLoss(total, float(l_pi.data), float(l_v.data), float(l_hop.data), R)


# ------------------------------------------------------------------------ ACT


def act_halting(answers, h, eps: float = ACT_EPSILON, n_hops: int | None = None):
    """Mix per-hop answers with ACT halting probabilities.

    Returns ``(answer, p, T)`` where ``p[:T]`` sums to one exactly under
    left-to-right summation.
    """
    h = np.ascontiguousarray(np.asarray(h, dtype=np.float64).reshape(-1))
    if h.size == 0:
        raise ContractError("ACT needs at least one hop")
    if n_hops is not None:
        h = np.ascontiguousarray(h[:n_hops])
    p, T = kernels.act_weights(h, float(eps))
    answers = np.asarray(answers, dtype=np.float64)
    mix = np.tensordot(p[:T], answers[:T], axes=(0, 0))
    return mix, p[:T], T


class ActHalting:
    """ACT halting units taken from the policy's continue-logit (trained by backprop)."""

    name = "act"

    def __init__(self, policy: PolicyParams, eps: float = ACT_EPSILON):
        self.policy = policy
        self.eps = eps

    def begin(self, B, n_hops, training, rng):
        return _ActCtl(self.policy, B, n_hops, self.eps)


@dataclass
class ActRecord:
    p: list  # per hop (B,) Values
    remainder: Value  # (B,)
    hops: np.ndarray | None = None


class _ActCtl:
    def __init__(self, policy, B, n_hops, eps):
        self.policy = policy
        self.n_hops = n_hops
        self.eps = eps
        self.z = Value(np.zeros((B, policy.hidden)))
        self.prev = None
        self.running = np.zeros(B)
        self.cum = None  # Value, sum of h over hops before this one
        self.p = []
        self.remainder = None

    def step(self, weights, t, active):
        obs = build_observation(weights, self.prev, t, self.n_hops).features
        self.prev = weights
        self.z, _, _, h = policy_step(obs, self.z, self.policy)
        halt_now = active & ((self.running + h.data >= 1.0 - self.eps) | (t == self.n_hops - 1))
        cont = active & ~halt_now
        before = Value(np.zeros_like(h.data)) if self.cum is None else self.cum
        rem = ad.sub(1.0, before)
        p_t = ad.add(ad.mul(h, cont.astype(np.float64)), ad.mul(rem, halt_now.astype(np.float64)))
        self.p.append(p_t)
        self.remainder = rem if self.remainder is None else ad.add(
            ad.mul(self.remainder, (~halt_now).astype(np.float64)),
            ad.mul(rem, halt_now.astype(np.float64)))
        self.cum = ad.add(before, h)
        self.running = self.running + h.data
        return cont

    def combine(self, answers, hops):
        total = None
        for a, p in zip(answers, self.p):
            term = ad.mul(a, ad.reshape(p, (p.shape[0], 1)))
            total = term if total is None else ad.add(total, term)
        return total

    def record(self) -> ActRecord:
        return ActRecord(self.p, self.remainder)


def make_halting(kind: str, policy: PolicyParams | None = None, fixed_hops: int = 1):
    """Strategy from its config name: reinforce, act, fixed, never."""
    if kind == "reinforce":
        return ReinforceHalting(policy)
    if kind == "act":
        return ActHalting(policy)
    if kind in ("fixed", "fixed-k"):
        return FixedHops(fixed_hops)
    if kind == "never":
        return NeverHalt()
    raise ConfigError(f"unknown halting strategy {kind!r}")
