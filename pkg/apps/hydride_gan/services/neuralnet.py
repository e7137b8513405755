"""Dense network kernel: MLP forward/backward, Adam, initialization and gradient checks."""
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog

from apps.hydride_gan.config import config
from apps.hydride_gan.utils.error_handler import (
    DimensionMismatch,
    InvariantViolation,
    StaleCache,
)

logger = structlog.get_logger()

SIGMOID_CLAMP = 1e-12
CHECKPOINT_FORMAT_VERSION = 1
_ACTIVATIONS = ("relu", "linear", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths and activations of a fully-connected network."""

    layer_dims: Tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise InvariantViolation(f"an MLP needs at least 2 layer dims, got {dims}")
        if any(d < 1 for d in dims):
            raise InvariantViolation(f"layer dims must be >= 1, got {dims}")
        for activation in (self.hidden_activation, self.output_activation):
            if activation not in _ACTIVATIONS:
                raise InvariantViolation(f"unknown activation '{activation}'")
        if self.output_activation == "sigmoid" and dims[-1] != 1:
            raise InvariantViolation("a sigmoid (discriminator) head must have output dim 1")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @classmethod
    def generator(
        cls, dim: int, hidden_layers: Optional[int] = None, hidden_units: Optional[int] = None
    ) -> "MlpSpec":
        hidden_layers = config.HIDDEN_LAYERS if hidden_layers is None else hidden_layers
        hidden_units = config.HIDDEN_UNITS if hidden_units is None else hidden_units
        return cls((dim, *([hidden_units] * hidden_layers), dim), "relu", "linear")

    @classmethod
    def discriminator(
        cls, dim: int, hidden_layers: Optional[int] = None, hidden_units: Optional[int] = None
    ) -> "MlpSpec":
        hidden_layers = config.HIDDEN_LAYERS if hidden_layers is None else hidden_layers
        hidden_units = config.HIDDEN_UNITS if hidden_units is None else hidden_units
        return cls((dim, *([hidden_units] * hidden_layers), 1), "relu", "sigmoid")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layer_dims": list(self.layer_dims),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MlpSpec":
        return cls(
            layer_dims=tuple(data["layer_dims"]),
            hidden_activation=data.get("hidden_activation", "relu"),
            output_activation=data.get("output_activation", "linear"),
        )


@dataclass
class MlpParams:
    """Weights of shape (out, in) and biases of shape (out,) per layer, float64."""

    spec: MlpSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        dims = self.spec.layer_dims
        if len(self.weights) != self.spec.n_layers or len(self.biases) != self.spec.n_layers:
            raise DimensionMismatch("parameter count does not match the layer spec")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[k + 1], dims[k]) or b.shape != (dims[k + 1],):
                raise DimensionMismatch(
                    f"layer {k}: expected W {(dims[k + 1], dims[k])} b {(dims[k + 1],)}, "
                    f"got {w.shape} {b.shape}"
                )

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(json.dumps(self.spec.to_dict(), sort_keys=True).encode("utf-8"))
        for w, b in zip(self.weights, self.biases):
            digest.update(np.ascontiguousarray(w).tobytes())
            digest.update(np.ascontiguousarray(b).tobytes())
        return digest.hexdigest()

    def allclose(self, other: "MlpParams", atol: float = 0.0) -> bool:
        if self.spec != other.spec:
            return False
        pairs = list(zip(self.weights, other.weights)) + list(zip(self.biases, other.biases))
        return all(np.allclose(a, b, rtol=0.0, atol=atol) for a, b in pairs)


@dataclass
class MlpGrads:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __add__(self, other: "MlpGrads") -> "MlpGrads":
        return MlpGrads(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    @classmethod
    def zeros_like(cls, p: MlpParams) -> "MlpGrads":
        return cls([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.weights + self.biases)


@dataclass
class ForwardCache:
    """Values retained by `forward` for the matching `backward` call."""

    params: MlpParams
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    output: np.ndarray
    batched: bool
    clamped: Optional[np.ndarray] = None


def mlp_init(spec: MlpSpec, seed: int) -> MlpParams:
    """
    Glorot-uniform weights from a seeded generator, zero biases.

    Args:
        spec: Layer spec
        seed: PRNG seed

    Returns:
        MlpParams; identical for identical (spec, seed)
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return MlpParams(spec, weights, biases)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return np.clip(sigmoid(z), SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
    return z


def forward(p: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """
    Affine + activation chain.

    Args:
        p: Network parameters
        x: Input vector (in,) or batch (B, in)

    Returns:
        (y, cache); y has the batch shape of x

    Raises:
        DimensionMismatch: input width differs from the first layer
    """
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x.reshape(1, -1)
    if x.ndim not in (1, 2) or h.shape[1] != p.spec.layer_dims[0]:
        raise DimensionMismatch(
            f"input shape {x.shape} does not match input dim {p.spec.layer_dims[0]}"
        )
    inputs, pre_activations = [], []
    last = p.spec.n_layers - 1
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        inputs.append(h)
        z = h @ w.T + b
        pre_activations.append(z)
        h = _activate(z, p.spec.output_activation if k == last else p.spec.hidden_activation)
    clamped = None
    if p.spec.output_activation == "sigmoid":
        raw = sigmoid(pre_activations[-1])
        clamped = (raw < SIGMOID_CLAMP) | (raw > 1.0 - SIGMOID_CLAMP)
    cache = ForwardCache(p, inputs, pre_activations, h, batched, clamped)
    return (h if batched else h[0]), cache


def backward(cache: ForwardCache, grad_y: np.ndarray) -> Tuple[MlpGrads, np.ndarray]:
    """
    Reverse-mode gradients for the cached forward pass.

    ReLU has subgradient 0 at 0; the clamped sigmoid has derivative 0 where it clamps.

    Args:
        cache: Cache from `forward`
        grad_y: dL/dy shaped like the forward output

    Returns:
        (parameter gradients, dL/dx shaped like the forward input)

    Raises:
        StaleCache: grad_y does not match the cached output
    """
    grad = np.asarray(grad_y, dtype=np.float64)
    if not cache.batched:
        grad = grad.reshape(1, -1) if grad.ndim == 1 else grad
    if grad.shape != cache.output.shape:
        raise StaleCache(
            f"upstream gradient shape {np.shape(grad_y)} does not match cached output "
            f"{cache.output.shape}"
        )
    p = cache.params
    last = p.spec.n_layers - 1
    grad_w: List[np.ndarray] = [np.empty(0)] * p.spec.n_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * p.spec.n_layers
    for k in range(last, -1, -1):
        z = cache.pre_activations[k]
        activation = p.spec.output_activation if k == last else p.spec.hidden_activation
        if activation == "relu":
            grad = grad * (z > 0.0)
        elif activation == "sigmoid":
            s = sigmoid(z)
            grad = grad * s * (1.0 - s)
            grad = np.where(cache.clamped, 0.0, grad)
        grad_w[k] = grad.T @ cache.inputs[k]
        grad_b[k] = grad.sum(axis=0)
        grad = grad @ p.weights[k]
    return MlpGrads(grad_w, grad_b), (grad if cache.batched else grad[0])


@dataclass
class AdamState:
    """Adam moments per parameter array plus the step counter."""

    m_weights: List[np.ndarray]
    v_weights: List[np.ndarray]
    m_biases: List[np.ndarray]
    v_biases: List[np.ndarray]
    t: int = 0
    alpha: float = field(default_factory=lambda: config.DEFAULT_LEARNING_RATE)
    beta1: float = field(default_factory=lambda: config.DEFAULT_BETA1)
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, p: MlpParams, **kwargs) -> "AdamState":
        return cls(
            m_weights=[np.zeros_like(w) for w in p.weights],
            v_weights=[np.zeros_like(w) for w in p.weights],
            m_biases=[np.zeros_like(b) for b in p.biases],
            v_biases=[np.zeros_like(b) for b in p.biases],
            **kwargs,
        )


def _adam_update(
    value: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, st: AdamState, t: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if value.shape != grad.shape:
        raise DimensionMismatch(f"gradient shape {grad.shape} does not match {value.shape}")
    m = st.beta1 * m + (1.0 - st.beta1) * grad
    v = st.beta2 * v + (1.0 - st.beta2) * grad * grad
    m_hat = m / (1.0 - st.beta1 ** t)
    v_hat = v / (1.0 - st.beta2 ** t)
    return value - st.alpha * m_hat / (np.sqrt(v_hat) + st.eps), m, v


def adam_step(p: MlpParams, grads: MlpGrads, st: AdamState) -> Tuple[MlpParams, AdamState]:
    """
    One bias-corrected Adam update; inputs are left untouched.

    Returns:
        (updated params, updated state with t + 1)
    """
    t = st.t + 1
    weights, m_w, v_w, biases, m_b, v_b = [], [], [], [], [], []
    for k in range(p.spec.n_layers):
        w, m, v = _adam_update(p.weights[k], grads.weights[k], st.m_weights[k],
                               st.v_weights[k], st, t)
        weights.append(w)
        m_w.append(m)
        v_w.append(v)
        b, m, v = _adam_update(p.biases[k], grads.biases[k], st.m_biases[k],
                               st.v_biases[k], st, t)
        biases.append(b)
        m_b.append(m)
        v_b.append(v)
    state = AdamState(m_w, v_w, m_b, v_b, t=t, alpha=st.alpha, beta1=st.beta1,
                      beta2=st.beta2, eps=st.eps)
    return MlpParams(p.spec, weights, biases), state


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function; `x` is restored afterwards."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for k in range(flat.size):
        original = flat[k]
        flat[k] = original + h
        plus = f(x)
        flat[k] = original - h
        minus = f(x)
        flat[k] = original
        out[k] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a|| + ||n||, 1e-12)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12))


def save_networks(path, networks: Dict[str, MlpParams], meta: Optional[Dict[str, Any]] = None) -> str:
    """
    Write named networks to one .npz checkpoint.

    Args:
        path: Output file
        networks: name -> params
        meta: Extra JSON-serializable fields (seed, epoch, normalizer, ...)

    Returns:
        sha256 of the written file
    """
    arrays: Dict[str, np.ndarray] = {}
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "specs": {name: p.spec.to_dict() for name, p in networks.items()},
        "meta": meta or {},
    }
    for name, p in networks.items():
        for k, (w, b) in enumerate(zip(p.weights, p.biases)):
            arrays[f"{name}__W{k}"] = w
            arrays[f"{name}__b{k}"] = b
    arrays["header"] = np.array(json.dumps(header, sort_keys=True))
    path = Path(path)
    with path.open("wb") as handle:
        np.savez(handle, **arrays)
    checksum = hashlib.sha256(path.read_bytes()).hexdigest()
    logger.debug("checkpoint_saved", path=str(path), networks=sorted(networks), sha256=checksum)
    return checksum


def load_networks(path) -> Tuple[Dict[str, MlpParams], Dict[str, Any]]:
    """
    Read a checkpoint written by `save_networks`.

    Returns:
        (name -> params, meta)
    """
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(str(archive["header"]))
        if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise InvariantViolation(
                f"unsupported checkpoint format {header.get('format_version')}"
            )
        networks = {}
        for name, spec_data in header["specs"].items():
            spec = MlpSpec.from_dict(spec_data)
            networks[name] = MlpParams(
                spec,
                [archive[f"{name}__W{k}"] for k in range(spec.n_layers)],
                [archive[f"{name}__b{k}"] for k in range(spec.n_layers)],
            )
    return networks, header.get("meta", {})
