"""Dense dual-zone actor-critic network with an explicit backward pass and
the advantage actor-critic update.

Every hidden layer uses tanh. The shared zone follows the input layer, the
personal zone follows the shared zone and both heads read the last hidden
layer. Weights are stored as `(fan_in, fan_out)` matrices.
"""
import enum
import hashlib
from typing import List, Optional, Sequence, Tuple

import numpy as np
from attrs import define, field

__all__ = [
    "DenseLayer",
    "DivergenceError",
    "DualZoneNetwork",
    "ForwardCache",
    "IncompatibleZone",
    "InvalidParameter",
    "LossDiagnostics",
    "ShapeMismatch",
    "Trajectory",
    "ZoneRecord",
    "Zone",
    "a2c_gradients",
    "a2c_loss",
    "a2c_update",
    "build_network",
    "clip_gradients",
    "deserialize_zone",
    "discounted_returns",
    "parameter_checksum",
    "serialize_zone",
    "shared_layer_widths",
    "softmax_temperature",
]

VALUE_COEF = 0.5
ENTROPY_COEF = 0.01
LR_RANGE = (0.0001, 0.01)
GAMMA_RANGE = (0.8, 0.99)


class ShapeMismatch(ValueError):
    """Raised when an input does not match the network's input width."""

    def __init__(self, expected: int, got: int) -> None:
        super().__init__(expected, got)

        self.expected = expected
        self.got = got

    def __str__(self):
        return f"expected input width {self.expected}, got {self.got}"


class InvalidParameter(ValueError):
    """Raised when a numerical parameter is outside its admissible range."""

    def __init__(self, name: str, value: float, expected: str) -> None:
        super().__init__(name, value, expected)

        self.name = name
        self.value = value
        self.expected = expected

    def __str__(self):
        return f"{self.name}={self.value} must be {self.expected}"


class DivergenceError(RuntimeError):
    """Raised when a loss is not finite."""

    def __init__(self, what: str, value: float) -> None:
        super().__init__(what, value)

        self.what = what
        self.value = value

    def __str__(self):
        return f"{self.what} diverged to {self.value}"


class IncompatibleZone(ValueError):
    """Raised when a parameter record does not fit a network's zone."""

    def __init__(self, expected, got) -> None:
        super().__init__(expected, got)

        self.expected = expected
        self.got = got

    def __str__(self):
        return f"zone layout {self.got} does not match {self.expected}"


@enum.unique
class Zone(enum.Enum):
    """Parameter partition of a dual-zone network."""

    SHARED = "shared"
    PERSONAL = "personal"


@define(kw_only=True, eq=False)
class DenseLayer:
    """Affine layer `x @ weights + biases`."""

    weights: np.ndarray
    biases: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        """`(fan_in, fan_out)` of the layer."""
        return self.weights.shape

    @classmethod
    def init(cls, fan_in: int, fan_out: int, rng: np.random.Generator) -> "DenseLayer":
        """Creates a layer with uniform Glorot weights and zero biases."""
        limit = np.sqrt(6.0 / (fan_in + fan_out))

        return cls(
            weights=rng.uniform(-limit, limit, size=(fan_in, fan_out)),
            biases=np.zeros(fan_out),
        )

    def copy(self) -> "DenseLayer":
        """Returns a deep copy of the layer."""
        return DenseLayer(weights=self.weights.copy(), biases=self.biases.copy())


@define(kw_only=True)
class ForwardCache:
    """Activations kept by a batched forward pass for the backward pass.

    Arguments:
        activations: input of every hidden layer followed by the output of
            the last hidden layer.
        logits: actor outputs, `(batch, actions)`.
        values: critic outputs, `(batch,)`.
    """

    activations: List[np.ndarray]
    logits: np.ndarray
    values: np.ndarray


@define(kw_only=True, eq=False)
class DualZoneNetwork:
    """Actor-critic network split into a shared and a personal zone.

    Arguments:
        arch_type: shared architecture type; equal types have equal shared
            zone shapes.
        shared: hidden layers of the shared zone.
        personal: hidden layers of the personal zone.
        actor: head producing one logit per server slot.
        critic: head producing the state value.
    """

    arch_type: int
    shared: List[DenseLayer]
    personal: List[DenseLayer]
    actor: DenseLayer
    critic: DenseLayer

    @property
    def input_width(self) -> int:
        """Width of the accepted input vectors."""
        return self.layers()[0].shape[0]

    @property
    def n_actions(self) -> int:
        """Number of actor outputs."""
        return self.actor.shape[1]

    @property
    def hidden(self) -> List[DenseLayer]:
        """Hidden layers, shared zone first."""
        return self.shared + self.personal

    def layers(self) -> List[DenseLayer]:
        """Every layer in parameter order: hidden layers, actor, critic."""
        return self.hidden + [self.actor, self.critic]

    def zone_layers(self, zone: Zone) -> List[DenseLayer]:
        """Layers of a zone; the heads belong to the personal zone."""
        match zone:
            case Zone.SHARED:
                return list(self.shared)

            case Zone.PERSONAL:
                return self.personal + [self.actor, self.critic]

            case _:
                raise ValueError(f"unknown zone {zone}")

    def parameter_count(self) -> int:
        """Number of scalar parameters."""
        return sum(l.weights.size + l.biases.size for l in self.layers())

    def copy(self) -> "DualZoneNetwork":
        """Returns a deep copy of the network."""
        return DualZoneNetwork(
            arch_type=self.arch_type,
            shared=[l.copy() for l in self.shared],
            personal=[l.copy() for l in self.personal],
            actor=self.actor.copy(),
            critic=self.critic.copy(),
        )

    def forward_batch(self, states: np.ndarray) -> ForwardCache:
        """Runs the network on a `(batch, input_width)` matrix.

        Raises:
            ShapeMismatch: if the states do not match the input width.
        """
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if states.shape[1] != self.input_width:
            raise ShapeMismatch(self.input_width, states.shape[1])

        activations = [states]
        out = states
        for layer in self.hidden:
            out = np.tanh(out @ layer.weights + layer.biases)
            activations.append(out)

        logits = out @ self.actor.weights + self.actor.biases
        values = (out @ self.critic.weights + self.critic.biases)[:, 0]

        return ForwardCache(activations=activations, logits=logits, values=values)

    def forward(self, state: np.ndarray) -> Tuple[np.ndarray, float]:
        """Runs the network on a single state.

        Returns:
            The action logits and the state value.
        """
        state = np.asarray(state, dtype=np.float64)
        if state.ndim != 1 or state.shape[0] != self.input_width:
            raise ShapeMismatch(self.input_width, state.shape[-1] if state.ndim else 0)

        cache = self.forward_batch(state[None, :])

        return cache.logits[0], float(cache.values[0])

    def backward(
        self, cache: ForwardCache, dlogits: np.ndarray, dvalues: np.ndarray
    ) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Backpropagates loss gradients w.r.t. the outputs of a batched
        forward pass.

        Returns:
            `(dW, db)` for every layer, in `layers()` order.
        """
        last = cache.activations[-1]
        dvalues = np.asarray(dvalues, dtype=np.float64)[:, None]

        actor_grad = (last.T @ dlogits, dlogits.sum(axis=0))
        critic_grad = (last.T @ dvalues, dvalues.sum(axis=0))

        grad_out = dlogits @ self.actor.weights.T + dvalues @ self.critic.weights.T
        hidden_grads: List[Tuple[np.ndarray, np.ndarray]] = []

        for idx in range(len(self.hidden) - 1, -1, -1):
            out = cache.activations[idx + 1]
            grad_pre = grad_out * (1.0 - out**2)
            hidden_grads.append((cache.activations[idx].T @ grad_pre, grad_pre.sum(axis=0)))
            grad_out = grad_pre @ self.hidden[idx].weights.T

        return list(reversed(hidden_grads)) + [actor_grad, critic_grad]

    def apply_gradients(self, grads: Sequence[Tuple[np.ndarray, np.ndarray]], lr: float):
        """Takes a gradient descent step in place."""
        for layer, (dw, db) in zip(self.layers(), grads):
            layer.weights -= lr * dw
            layer.biases -= lr * db


def shared_layer_widths(arch_type: int) -> List[int]:
    """Hidden widths of a shared architecture type: type `t` has `t` layers
    of width `32 * t`, capped at 256."""
    return [min(32 * arch_type, 256)] * arch_type


def build_network(  # pylint: disable=too-many-arguments
    input_width: int,
    n_actions: int,
    arch_type: int,
    personal_widths: Sequence[int],
    rng: np.random.Generator,
    shared_widths: Optional[Sequence[int]] = None,
) -> DualZoneNetwork:
    """Creates a randomly initialized dual-zone network.

    Arguments:
        input_width: width of the state encoding.
        n_actions: number of server slots.
        arch_type: shared architecture type.
        personal_widths: widths of the personal hidden layers.
        rng: source of the initial weights.
        shared_widths: explicit shared widths, by default those of
            `arch_type`.
    """
    if shared_widths is None:
        shared_widths = shared_layer_widths(arch_type)

    widths = [input_width, *shared_widths, *personal_widths]
    hidden = [DenseLayer.init(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    return DualZoneNetwork(
        arch_type=arch_type,
        shared=hidden[: len(shared_widths)],
        personal=hidden[len(shared_widths) :],
        actor=DenseLayer.init(widths[-1], n_actions, rng),
        critic=DenseLayer.init(widths[-1], 1, rng),
    )


def softmax_temperature(logits: np.ndarray, tau_temp: float = 1.0) -> np.ndarray:
    """Temperature softmax over the last axis.

    Raises:
        InvalidParameter: if the temperature is not positive.
    """
    if not tau_temp > 0:
        raise InvalidParameter("tau_temp", tau_temp, "positive")

    scaled = np.asarray(logits, dtype=np.float64) / tau_temp
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    exp = np.exp(scaled)

    return exp / exp.sum(axis=-1, keepdims=True)


def _check_gamma(_, attribute, value):
    low, high = GAMMA_RANGE
    if not low <= value <= high:
        raise InvalidParameter(attribute.name, value, f"in [{low}, {high}]")


def _check_nonempty(_, attribute, value):
    if len(value) == 0:
        raise InvalidParameter(attribute.name, len(value), "non-empty")


@define(frozen=True, kw_only=True, eq=False)
class Trajectory:
    """Transitions of one episode.

    Arguments:
        states: encoded states.
        actions: chosen server indices.
        rewards: rewards of the placements.
        values: critic estimates at collection time.
        log_probs: log-probabilities of the chosen actions.
        gamma: discount factor.
    """

    states: Tuple[np.ndarray, ...] = field(converter=tuple, validator=_check_nonempty)
    actions: Tuple[int, ...] = field(converter=tuple)
    rewards: Tuple[float, ...] = field(converter=tuple)
    values: Tuple[float, ...] = field(converter=tuple)
    log_probs: Tuple[float, ...] = field(converter=tuple)
    gamma: float = field(default=0.95, validator=_check_gamma)

    def __len__(self):
        return len(self.states)


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Discounted return from every step to the end of the episode."""
    returns = np.zeros(len(rewards))
    running = 0.0

    for idx in range(len(rewards) - 1, -1, -1):
        running = rewards[idx] + gamma * running
        returns[idx] = running

    return returns


@define(frozen=True, kw_only=True)
class LossDiagnostics:
    """Terms of the actor-critic loss."""

    policy_loss: float
    value_loss: float
    entropy: float
    total: float


def _policy_terms(logits: np.ndarray, n_valid: int):
    valid = logits[:, :n_valid]
    probs = softmax_temperature(valid, 1.0)
    shifted = valid - valid.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    return probs, log_probs


def a2c_loss(  # pylint: disable=too-many-arguments
    net: DualZoneNetwork,
    states: np.ndarray,
    actions: Sequence[int],
    returns: np.ndarray,
    advantages: np.ndarray,
    n_valid: int,
) -> LossDiagnostics:
    """Actor-critic loss with the advantages held constant.

    `-mean(A log pi(a|s)) + 0.5 mean((R - V)^2) - 0.01 mean(H)`, with the
    policy restricted to the first `n_valid` server slots.
    """
    cache = net.forward_batch(states)
    _, log_probs = _policy_terms(cache.logits, n_valid)
    probs = np.exp(log_probs)
    idx = np.arange(len(actions))

    policy = float(-np.mean(advantages * log_probs[idx, list(actions)]))
    value = float(np.mean((returns - cache.values) ** 2))
    entropy = float(np.mean(-(probs * log_probs).sum(axis=1)))

    return LossDiagnostics(
        policy_loss=policy,
        value_loss=value,
        entropy=entropy,
        total=policy + VALUE_COEF * value - ENTROPY_COEF * entropy,
    )


def a2c_gradients(  # pylint: disable=too-many-arguments,too-many-locals
    net: DualZoneNetwork,
    states: np.ndarray,
    actions: Sequence[int],
    returns: np.ndarray,
    advantages: np.ndarray,
    n_valid: int,
) -> Tuple[LossDiagnostics, List[Tuple[np.ndarray, np.ndarray]]]:
    """Loss of `a2c_loss` and its gradient w.r.t. every layer."""
    cache = net.forward_batch(states)
    probs, log_probs = _policy_terms(cache.logits, n_valid)
    batch = len(actions)
    idx = np.arange(batch)

    entropy = -(probs * log_probs).sum(axis=1)
    onehot = np.zeros_like(probs)
    onehot[idx, list(actions)] = 1.0

    dvalid = -advantages[:, None] * (onehot - probs) / batch
    dvalid += ENTROPY_COEF * probs * (log_probs + entropy[:, None]) / batch
    dlogits = np.zeros_like(cache.logits)
    dlogits[:, :n_valid] = dvalid
    dvalues = 2.0 * VALUE_COEF * (cache.values - returns) / batch

    policy = float(-np.mean(advantages * log_probs[idx, list(actions)]))
    value = float(np.mean((returns - cache.values) ** 2))
    diag = LossDiagnostics(
        policy_loss=policy,
        value_loss=value,
        entropy=float(entropy.mean()),
        total=policy + VALUE_COEF * value - ENTROPY_COEF * float(entropy.mean()),
    )

    return diag, net.backward(cache, dlogits, dvalues)


def clip_gradients(grads, max_norm: Optional[float]):
    """Rescales gradients whose global norm exceeds `max_norm`."""
    if max_norm is None:
        return grads

    norm = np.sqrt(sum(float((dw**2).sum() + (db**2).sum()) for dw, db in grads))
    if norm <= max_norm or norm == 0:
        return grads

    scale = max_norm / norm
    return [(dw * scale, db * scale) for dw, db in grads]


def a2c_update(
    net: DualZoneNetwork,
    traj: Trajectory,
    lr: float,
    n_valid: int,
    max_grad_norm: Optional[float] = None,
) -> LossDiagnostics:
    """Takes one actor-critic gradient step on a trajectory, updating both
    zones together.

    Advantages are the discounted returns minus the current critic values.

    Raises:
        InvalidParameter: if the learning rate is outside its range.
        DivergenceError: if the loss is not finite.
    """
    low, high = LR_RANGE
    if not low <= lr <= high:
        raise InvalidParameter("lr", lr, f"in [{low}, {high}]")

    states = np.stack(traj.states)
    returns = discounted_returns(traj.rewards, traj.gamma)
    values = net.forward_batch(states).values
    advantages = returns - values

    diag, grads = a2c_gradients(net, states, traj.actions, returns, advantages, n_valid)
    if not np.isfinite(diag.total):
        raise DivergenceError("actor-critic loss", diag.total)

    net.apply_gradients(clip_gradients(grads, max_grad_norm), lr)

    return diag


@define(frozen=True, kw_only=True, eq=False)
class ZoneRecord:
    """Flat parameters of one zone: layers in order, each layer's weights
    row-major followed by its biases.

    Arguments:
        zone: the zone the parameters belong to.
        shapes: `(fan_in, fan_out)` of every layer.
        values: the flat parameters.
    """

    zone: Zone
    shapes: Tuple[Tuple[int, int], ...]
    values: np.ndarray

    @property
    def size(self) -> int:
        """Number of scalar parameters."""
        return int(self.values.size)


def serialize_zone(net: DualZoneNetwork, zone: Zone) -> ZoneRecord:
    """Copies a zone's parameters into a flat record."""
    layers = net.zone_layers(zone)
    parts = []
    for layer in layers:
        parts.append(layer.weights.ravel())
        parts.append(layer.biases.ravel())

    values = np.concatenate(parts) if parts else np.zeros(0)

    return ZoneRecord(
        zone=zone,
        shapes=tuple(tuple(int(d) for d in l.shape) for l in layers),
        values=values.copy(),
    )


def deserialize_zone(net: DualZoneNetwork, record: ZoneRecord) -> DualZoneNetwork:
    """Loads a zone record into a network in place.

    Raises:
        IncompatibleZone: if the record's layout differs from the zone's.
    """
    layers = net.zone_layers(record.zone)
    shapes = tuple(tuple(int(d) for d in l.shape) for l in layers)
    if shapes != record.shapes or record.size != sum((a + 1) * b for a, b in shapes):
        raise IncompatibleZone(shapes, record.shapes)

    offset = 0
    for layer in layers:
        fan_in, fan_out = layer.shape
        layer.weights = record.values[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        layer.weights = layer.weights.copy()
        offset += fan_in * fan_out
        layer.biases = record.values[offset : offset + fan_out].copy()
        offset += fan_out

    return net


def parameter_checksum(net: DualZoneNetwork) -> str:
    """SHA-256 of every parameter in layer order."""
    digest = hashlib.sha256()
    for layer in net.layers():
        digest.update(np.ascontiguousarray(layer.weights).tobytes())
        digest.update(np.ascontiguousarray(layer.biases).tobytes())

    return digest.hexdigest()
