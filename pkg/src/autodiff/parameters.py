import json
from collections.abc import Callable, Iterator, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from autodiff.tensor import Array, Tensor
from errors import CheckpointError, ContractError
from utils import get_logger


logger = get_logger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

ENCODER_GROUP = "encoder"
HEAD_GROUP = "head"


@dataclass
class Parameter:
    tensor: Tensor
    group: str
    decay: bool
    first_moment: Array
    second_moment: Array


class ParameterStore:
    """Named trainable tensors with gradient slots and Adam moment buffers."""

    def __init__(self) -> None:
        self._params: dict[str, Parameter] = {}
        self.step = 0

    def add(self, name: str, value: Array, *, group: str = HEAD_GROUP, decay: bool = True) -> Tensor:
        if name in self._params:
            msg = f"parameter {name} already registered"
            raise ContractError(msg)
        tensor = Tensor(value, requires_grad=True, name=name)
        if not np.isfinite(tensor.value).all():
            msg = f"parameter {name} has non-finite values"
            raise ContractError(msg)
        self._params[name] = Parameter(
            tensor=tensor,
            group=group,
            decay=decay,
            first_moment=np.zeros_like(tensor.value),
            second_moment=np.zeros_like(tensor.value),
        )
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name].tensor

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def parameter(self, name: str) -> Parameter:
        return self._params[name]

    def items(self) -> Iterator[tuple[str, Parameter]]:
        return iter(self._params.items())

    def zero_grad(self) -> None:
        for param in self._params.values():
            param.tensor.grad = np.zeros_like(param.tensor.value)

    def gradients(self) -> dict[str, Array]:
        return {name: _grad_or_zero(p.tensor) for name, p in self._params.items()}

    def snapshot(self) -> dict[str, Array]:
        return {name: p.tensor.value.copy() for name, p in self._params.items()}

    def load_values(self, values: Mapping[str, Array]) -> None:
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            msg = f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            raise CheckpointError(msg)
        for name, value in values.items():
            target = self._params[name].tensor
            array = np.asarray(value, dtype=np.float64)
            if array.shape != target.shape:
                msg = f"parameter {name}: expected shape {target.shape}, got {array.shape}"
                raise CheckpointError(msg)
            target.value = array.copy()


def _grad_or_zero(t: Tensor) -> Array:
    return t.grad if t.grad is not None else np.zeros_like(t.value)


def uniform_init(rng: np.random.Generator, rows: int, cols: int, fan_in: int) -> Array:
    """Uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_parameters(
    embedding_dim: int,
    hidden_dim: int,
    seed: int,
    embedding_table: Array | None = None,
) -> ParameterStore:
    """Create every trainable tensor of the two networks.

    Parameters
    ----------
    embedding_dim : int
        Width of the provider vectors (d1).
    hidden_dim : int
        Width of token and span representations (d).
    seed : int
        Seed for the uniform initialiser.
    embedding_table : Array | None, optional
        Initial rows of a trainable vocabulary table, registered in the encoder group.

    Returns
    -------
    ParameterStore
        Store holding projections, the cross-attention feed-forward block and layer norm.
    """
    rng = np.random.default_rng(seed)
    d1, d = embedding_dim, hidden_dim
    store = ParameterStore()
    store.add("token.weight", uniform_init(rng, d, d1, d1))
    store.add("token.bias", uniform_init(rng, 1, d, d1), decay=False)
    store.add("span.weight", uniform_init(rng, d, 2 * d1, 2 * d1))
    store.add("span.bias", uniform_init(rng, 1, d, 2 * d1), decay=False)
    store.add("cross.ffn1.weight", uniform_init(rng, 2 * d, d, d))
    store.add("cross.ffn1.bias", uniform_init(rng, 1, 2 * d, d), decay=False)
    store.add("cross.ffn2.weight", uniform_init(rng, d, 2 * d, 2 * d))
    store.add("cross.ffn2.bias", uniform_init(rng, 1, d, 2 * d), decay=False)
    store.add("cross.norm.gain", np.ones((1, d)), decay=False)
    store.add("cross.norm.shift", np.zeros((1, d)), decay=False)
    if embedding_table is not None:
        store.add("embedding.table", embedding_table, group=ENCODER_GROUP, decay=False)
    return store


def save_checkpoint(path: str | Path, store: ParameterStore, metadata: Mapping[str, Any] | None = None) -> None:
    """Write parameters as JSON: ``name -> {shape, values}`` with row-major values."""
    document = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "step": store.step,
        "metadata": dict(metadata or {}),
        "parameters": {
            name: {
                "shape": list(param.tensor.shape),
                "group": param.group,
                "decay": param.decay,
                "values": param.tensor.value.ravel().tolist(),
            }
            for name, param in store.items()
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document), encoding="utf-8")
    logger.info("Checkpoint written to %s (%d parameters)", path, len(store))


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, dict[str, Any]]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises
    ------
    CheckpointError
        On unreadable JSON, a different format version or inconsistent shapes.
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        msg = f"checkpoint {path} is not valid JSON"
        raise CheckpointError(msg) from exc
    version = document.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        msg = f"checkpoint {path} has format version {version}, expected {CHECKPOINT_FORMAT_VERSION}"
        raise CheckpointError(msg)
    store = ParameterStore()
    for name, entry in document["parameters"].items():
        rows, cols = entry["shape"]
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != rows * cols:
            msg = f"parameter {name}: {values.size} values for shape {(rows, cols)}"
            raise CheckpointError(msg)
        store.add(
            name,
            values.reshape(rows, cols),
            group=entry.get("group", HEAD_GROUP),
            decay=entry.get("decay", True),
        )
    store.step = int(document.get("step", 0))
    return store, document.get("metadata", {})


def numerical_gradient(loss_fn: Callable[[], float], store: ParameterStore, eps: float = 1e-5) -> dict[str, Array]:
    """Central finite differences of ``loss_fn`` w.r.t. every stored parameter."""
    grads: dict[str, Array] = {}
    for name, param in store.items():
        value = param.tensor.value
        grad = np.zeros_like(value)
        for index in np.ndindex(value.shape):
            original = value[index]
            value[index] = original + eps
            plus = loss_fn()
            value[index] = original - eps
            minus = loss_fn()
            value[index] = original
            grad[index] = (plus - minus) / (2 * eps)
        grads[name] = grad
    return grads


def max_relative_error(analytic: Mapping[str, Array], numeric: Mapping[str, Array], floor: float = 1e-3) -> float:
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max(initial=0.0)))
    return worst
