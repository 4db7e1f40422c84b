
"""Reverse-mode autodiff over numpy arrays, a parameter store and Adam.

Every op records a closure that pushes the output gradient back to its inputs;
`Tensor.backward` walks the tape in reverse topological order once.
"""

import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import JTreeKitError, NonFinite, ShapeMismatch

logger = logging.getLogger(__name__)

CONTAINER_MAGIC = "JTREEKIT-CONTAINER 1"
CONTAINER_END = "END"
NEG_INF = -1e9

_state = {"dtype": np.float32, "grad": True}

ArrayLike = Union[np.ndarray, float, int, Sequence]


@contextmanager
def precision(dtype):
    previous = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = previous


@contextmanager
def no_grad():
    previous = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = previous


def default_dtype():
    return _state["dtype"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=_state["dtype"])
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[], None]] = None
        self.name = name

    def __repr__(self) -> str:
        label = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar, got shape {self.shape}")
        topo: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            stack.extend((parent, False) for parent in node._parents if id(parent) not in visited)

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()
        for node in topo:
            if node._parents:
                node._parents = ()
                node._backward = None

    # ---- operators ----

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# ------------------------------------------------------------------
# Tape plumbing
# ------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(t: Tensor, grad: np.ndarray):
    if not t.requires_grad:
        return
    grad = _unbroadcast(grad, t.shape)
    t.grad = grad.copy() if t.grad is None else t.grad + grad


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFinite(f"Non-finite values produced by `{op}`")
    out = Tensor(data)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
    return out


def _record(out: Tensor, backward: Callable[[np.ndarray], None]):
    if out.requires_grad:
        out._backward = lambda: backward(out.grad)


# ------------------------------------------------------------------
# Ops
# ------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = _result(a.data + b.data, (a, b), "add")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    _record(out, backward)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = _result(a.data - b.data, (a, b), "sub")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    _record(out, backward)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = _result(a.data * b.data, (a, b), "mul")

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    _record(out, backward)
    return out


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"`{op}` cannot broadcast {a.shape} with {b.shape}") from exc


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul of {a.shape} and {b.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    _record(out, backward)
    return out


def transpose(a: Tensor) -> Tensor:
    out = _result(a.data.T, (a,), "transpose")
    _record(out, lambda g: _accumulate(a, g.T))
    return out


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    out = _result(a.data.reshape(shape), (a,), "reshape")
    _record(out, lambda g: _accumulate(a, g.reshape(a.shape)))
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat of {[t.shape for t in tensors]}") from exc
    out = _result(data, tensors, "concat")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, part)

    _record(out, backward)
    return out


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(part, (slice, int)) for part in parts)


def getitem(a: Tensor, index) -> Tensor:
    out = _result(a.data[index], (a,), "getitem")
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        _accumulate(a, full)

    _record(out, backward)
    return out


def take_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Embedding lookup: rows of `table` selected by integer ids."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch(f"Row id out of range for table of {table.shape[0]} rows")
    return getitem(table, ids)


def tensor_sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    out = _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum")

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    _record(out, backward)
    return out


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def absolute(a: Tensor) -> Tensor:
    out = _result(np.abs(a.data), (a,), "abs")
    _record(out, lambda g: _accumulate(a, g * np.sign(a.data)))
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    out = _result(s, (a,), "sigmoid")
    _record(out, lambda g: _accumulate(a, g * s * (1.0 - s)))
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    out = _result(0.5 * x * (1.0 + t), (a,), "gelu")

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        _accumulate(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du))

    _record(out, backward)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _result(s, (a,), "softmax")
    _record(out, lambda g: _accumulate(a, s * (g - (g * s).sum(axis=axis, keepdims=True))))
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = _result(shifted - log_z, (a,), "log_softmax")
    s = np.exp(shifted - log_z)
    _record(out, lambda g: _accumulate(a, g - s * g.sum(axis=axis, keepdims=True)))
    return out


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = _result(xhat * gamma.data + beta.data, (a, gamma, beta), "layer_norm")
    n = x.shape[-1]

    def backward(g):
        dxhat = g * gamma.data
        dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        _accumulate(a, dx)
        _accumulate(gamma, g * xhat)
        _accumulate(beta, g)

    _record(out, backward)
    return out


# ---- Losses ----

def mse(pred: Tensor, target) -> Tensor:
    diff = sub(pred, target)
    return mean(mul(diff, diff))


def mae(pred: Tensor, target) -> Tensor:
    return mean(absolute(sub(pred, target)))


def cross_entropy(logits: Tensor, targets: Sequence[int], mask: Optional[Sequence[bool]] = None) -> Tensor:
    """Mean negative log-likelihood over the rows selected by `mask`."""
    targets = np.asarray(targets, dtype=np.int64)
    rows = logits.shape[0]
    if targets.shape != (rows,):
        raise ShapeMismatch(f"cross_entropy targets {targets.shape} for {rows} rows")
    weights = np.ones(rows) if mask is None else np.asarray(mask, dtype=np.float64)
    total = weights.sum()
    if total == 0:
        return Tensor(0.0)
    picked = getitem(log_softmax(logits), (np.arange(rows), targets))
    return mul(tensor_sum(mul(picked, weights / total)), -1.0)


# ------------------------------------------------------------------
# Parameters and optimization
# ------------------------------------------------------------------

def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ParamStore:
    """Named trainable tensors with Adam moments."""

    def __init__(self):
        self.params: Dict[str, Tensor] = {}
        self.moments: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        self.step = 0

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __len__(self) -> int:
        return len(self.params)

    def add(self, name: str, data: ArrayLike) -> Tensor:
        if name in self.params:
            raise ValueError(f"Parameter `{name}` already exists")
        param = parameter(data, name=name)
        self.params[name] = param
        return param

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def values(self) -> List[Tensor]:
        return list(self.params.values())

    def zero_grad(self):
        for param in self.params.values():
            param.grad = None

    def count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray], prefix: str = ""):
        for name, param in self.params.items():
            if not name.startswith(prefix):
                continue
            if name not in arrays:
                raise ShapeMismatch(f"Checkpoint lacks parameter `{name}`")
            value = np.asarray(arrays[name])
            if value.shape != param.shape:
                raise ShapeMismatch(f"Parameter `{name}` has shape {param.shape}, checkpoint {value.shape}")
            param.data = value.astype(param.data.dtype)

    def merge(self, other: "ParamStore"):
        for name, param in other.items():
            if name in self.params:
                raise ValueError(f"Parameter `{name}` already exists")
            self.params[name] = param


def grad_norm(store: ParamStore) -> float:
    total = sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in store.values() if p.grad is not None)
    return float(np.sqrt(total))


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    norm = grad_norm(store)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for param in store.values():
            if param.grad is not None:
                param.grad = param.grad * scale
    return norm


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    store.step += 1
    t = store.step
    for name, param in store.items():
        if param.grad is None:
            continue
        m, v = store.moments.get(name, (np.zeros_like(param.data), np.zeros_like(param.data)))
        m = beta1 * m + (1.0 - beta1) * param.grad
        v = beta2 * v + (1.0 - beta2) * param.grad ** 2
        store.moments[name] = (m, v)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        param.data = (param.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.data.dtype)


# ------------------------------------------------------------------
# Gradient check
# ------------------------------------------------------------------

def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-4,
    n_coords: int = 64,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Max relative error between analytic and finite-difference gradients.

    The numeric side Richardson-extrapolates central differences at eps and eps/2.
    """
    params = list(params)
    originals = [p.data for p in params]
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        try:
            for p in params:
                p.data = p.data.astype(np.float64)
                p.grad = None
            f().backward()
            analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

            coords = [(k, i) for k, p in enumerate(params) for i in range(p.data.size)]
            if len(coords) > n_coords:
                picks = rng.choice(len(coords), size=n_coords, replace=False)
                coords = [coords[i] for i in sorted(picks)]

            def central(flat, i, step):
                saved = flat[i]
                flat[i] = saved + step
                plus = f().item()
                flat[i] = saved - step
                minus = f().item()
                flat[i] = saved
                return (plus - minus) / (2 * step)

            worst = 0.0
            with no_grad():
                for k, i in coords:
                    flat = params[k].data.reshape(-1)
                    numeric = (4.0 * central(flat, i, eps / 2) - central(flat, i, eps)) / 3.0
                    exact = analytic[k].reshape(-1)[i]
                    if not np.isfinite(numeric):
                        raise NonFinite("Finite-difference evaluation produced a non-finite value")
                    worst = max(worst, abs(exact - numeric) / max(floor, abs(exact) + abs(numeric)))
            return worst
        finally:
            for p, data in zip(params, originals):
                p.data = data
                p.grad = None


# ------------------------------------------------------------------
# Container
# ------------------------------------------------------------------

def save_container(path: Path, arrays: Dict[str, np.ndarray], meta: Optional[Dict[str, str]] = None):
    """Text manifest followed by little-endian float32 payloads in manifest order."""
    lines = [CONTAINER_MAGIC]
    for key, value in (meta or {}).items():
        lines.append(f"@{key}={value}")
    for name, array in arrays.items():
        dims = " ".join(str(d) for d in np.shape(array))
        lines.append(f"{name}\tfloat32\t{dims}")
    lines.append(CONTAINER_END)
    payload = b"".join(np.ascontiguousarray(array, dtype="<f4").tobytes() for array in arrays.values())
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii") + payload)


def load_container(path: Path) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    raw = Path(path).read_bytes()
    marker = f"\n{CONTAINER_END}\n".encode("ascii")
    cut = raw.find(marker)
    if not raw.startswith(CONTAINER_MAGIC.encode("ascii")) or cut < 0:
        raise JTreeKitError(f"{path} is not a container file")
    header = raw[:cut].decode("ascii").splitlines()[1:]
    offset = cut + len(marker)

    arrays: Dict[str, np.ndarray] = {}
    meta: Dict[str, str] = {}
    for line in header:
        if line.startswith("@"):
            key, _, value = line[1:].partition("=")
            meta[key] = value
            continue
        name, dtype, dims = (line.split("\t") + [""])[:3]
        if dtype != "float32":
            raise JTreeKitError(f"Unsupported container dtype `{dtype}` for `{name}`")
        shape = tuple(int(d) for d in dims.split()) if dims.strip() else ()
        size = int(np.prod(shape)) if shape else 1
        chunk = raw[offset:offset + 4 * size]
        if len(chunk) != 4 * size:
            raise JTreeKitError(f"Container payload for `{name}` is truncated")
        arrays[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += 4 * size
    if offset != len(raw):
        raise JTreeKitError("Container has trailing bytes")
    return arrays, meta
