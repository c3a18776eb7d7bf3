"""
Differentiable Core
===================

A small dense numeric core with reverse-mode gradient accumulation.

Only the operations the generator and discriminator need are provided:
matrix multiply, embedding lookup, one-hot matrix multiply, elementwise
tanh/relu/exp/log/sigmoid, softmax, log-softmax, binary cross-entropy on
logits, sum/mean reductions, concatenation and stacking, plus the clip and
minimum operations the PPO surrogate uses.

All arithmetic is 64-bit. An operation records a backward function only
when one of its inputs requires a gradient, so inference builds no graph.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from errors import (
    ContractError,
    InvalidInputError,
    StructuralError,
    TrainingDivergenceError,
)
from rlgaf_config import DIVERGENCE_GUARD


BackwardFn = Callable[[np.ndarray], tuple]


class Tensor:
    """A float64 array that remembers how it was computed."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple = (),
        backward: Optional[BackwardFn] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise StructuralError(f"tensor of shape {self.data.shape} is not a scalar")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every grad-requiring leaf."""
        if self.data.size != 1:
            raise StructuralError(
                f"backward needs a scalar terminal, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            return

        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, grad in zip(node._parents, parent_grads):
                if grad is None or not parent.requires_grad:
                    continue
                grad = _unbroadcast(np.asarray(grad, dtype=np.float64), parent.data.shape)
                parent.grad = grad if parent.grad is None else parent.grad + grad

    # Operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence[float]]

_VISITING = 1
_DONE = 2


def _topological_order(root: Tensor) -> list[Tensor]:
    """Post-order over grad-requiring nodes; raises on a cycle."""
    order: list[Tensor] = []
    state: dict[int, int] = {id(root): _VISITING}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        for parent in parents:
            if not parent.requires_grad:
                continue
            seen = state.get(id(parent))
            if seen is None:
                state[id(parent)] = _VISITING
                stack.append((parent, iter(parent._parents)))
                break
            if seen == _VISITING:
                raise StructuralError("computation graph contains a cycle")
        else:
            stack.pop()
            state[id(node)] = _DONE
            order.append(node)
    return order


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: tuple, backward: BackwardFn) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


def detach(x: TensorLike) -> Tensor:
    return Tensor(as_tensor(x).data)


# Elementwise arithmetic

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data / b.data,
        (a, b),
        lambda g: (g / b.data, -g * a.data / (b.data * b.data)),
    )


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def sigmoid_value(x: float) -> float:
    """σ(x) as a plain float, kept inside the open interval (0, 1)."""
    p = _stable_sigmoid(np.array(x)).reshape(())
    return float(np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0)))


def minimum(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = (a.data <= b.data).astype(np.float64)
    return _result(
        np.minimum(a.data, b.data),
        (a, b),
        lambda g: (g * take_a, g * (1.0 - take_a)),
    )


def clip(a: TensorLike, low: float, high: float) -> Tensor:
    """Clamp to [low, high]; the gradient passes only inside the range."""
    a = as_tensor(a)
    inside = ((a.data >= low) & (a.data <= high)).astype(np.float64)
    return _result(np.clip(a.data, low, high), (a,), lambda g: (g * inside,))


# Linear algebra and indexing

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix/vector product for 1-D and 2-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise InvalidInputError(
            f"matmul supports 1-D/2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    out = a.data @ b.data

    def backward(g):
        if a.data.ndim == 2 and b.data.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        if a.data.ndim == 2:  # (m, n) @ (n,)
            return np.outer(g, b.data), a.data.T @ g
        if b.data.ndim == 2:  # (n,) @ (n, k)
            return b.data @ g, np.outer(a.data, g)
        return g * b.data, g * a.data

    return _result(out, (a, b), backward)


def onehot_matmul(weights: TensorLike, embedding: TensorLike) -> Tensor:
    """weights (V,) · embedding (V, d): the lookup-free embedding path."""
    weights, embedding = as_tensor(weights), as_tensor(embedding)
    if weights.data.ndim != 1 or embedding.data.ndim != 2:
        raise InvalidInputError("one-hot matmul needs a vector and a matrix")
    if weights.data.shape[0] != embedding.data.shape[0]:
        raise InvalidInputError(
            f"one-hot width {weights.data.shape[0]} does not match "
            f"embedding rows {embedding.data.shape[0]}"
        )
    return matmul(weights, embedding)


def embedding_lookup(table: TensorLike, index: int) -> Tensor:
    table = as_tensor(table)

    def backward(g):
        grad = np.zeros_like(table.data)
        grad[index] += g
        return (grad,)

    return _result(table.data[index].copy(), (table,), backward)


def pick(a: TensorLike, index: int) -> Tensor:
    """Select one component of a vector as a scalar."""
    a = as_tensor(a)

    def backward(g):
        grad = np.zeros_like(a.data)
        grad[index] = g
        return (grad,)

    return _result(np.array(a.data[index]), (a,), backward)


def concat(parts: Sequence[TensorLike]) -> Tensor:
    """Concatenate scalars and vectors into one vector."""
    tensors = [as_tensor(p) for p in parts]
    if not tensors:
        raise InvalidInputError("concat needs at least one tensor")
    flat = [np.atleast_1d(t.data) for t in tensors]
    sizes = [f.shape[0] for f in flat]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            g[offsets[i]:offsets[i + 1]].reshape(tensors[i].data.shape)
            for i in range(len(tensors))
        )

    return _result(np.concatenate(flat), tuple(tensors), backward)


def stack(parts: Sequence[TensorLike]) -> Tensor:
    tensors = [as_tensor(p) for p in parts]
    if not tensors:
        raise InvalidInputError("stack needs at least one tensor")
    return _result(
        np.stack([t.data for t in tensors]),
        tuple(tensors),
        lambda g: tuple(g[i] for i in range(len(tensors))),
    )


def straight_through(soft: TensorLike) -> Tensor:
    """Exact one-hot of argmax(soft) forward; identity gradient to soft."""
    soft = as_tensor(soft)
    hard = np.zeros_like(soft.data)
    hard[int(np.argmax(soft.data))] = 1.0
    return _result(hard, (soft,), lambda g: (g,))


# Reductions

def sum_all(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.data.shape),))


def mean(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _result(
        np.array(a.data.mean()),
        (a,),
        lambda g: (np.broadcast_to(g / n, a.data.shape),),
    )


def add_all(parts: Sequence[TensorLike]) -> Tensor:
    """Sum a list of same-shaped tensors."""
    if not parts:
        raise InvalidInputError("add_all needs at least one tensor")
    total = as_tensor(parts[0])
    for part in parts[1:]:
        total = add(total, part)
    return total


def mean_of(parts: Sequence[TensorLike]) -> Tensor:
    return div(add_all(parts), float(len(parts)))


# Probability primitives

def _check_logits(x: Tensor) -> None:
    if x.data.ndim != 1 or x.data.size == 0:
        raise InvalidInputError("logits must be a non-empty vector")
    if not np.all(np.isfinite(x.data)):
        raise InvalidInputError("logits must be finite")


def softmax(logits: TensorLike) -> Tensor:
    x = as_tensor(logits)
    _check_logits(x)
    shifted = np.exp(x.data - x.data.max())
    out = shifted / shifted.sum()
    return _result(out, (x,), lambda g: (out * (g - np.dot(g, out)),))


def log_softmax(logits: TensorLike) -> Tensor:
    x = as_tensor(logits)
    _check_logits(x)
    shifted = x.data - x.data.max()
    log_norm = np.log(np.exp(shifted).sum())
    out = shifted - log_norm
    probs = np.exp(out)
    return _result(out, (x,), lambda g: (g - probs * g.sum(),))


def bce_with_logits(score: TensorLike, label: int) -> Tensor:
    """-[y log σ(s) + (1-y) log(1-σ(s))] in log-sum-exp form."""
    s = as_tensor(score)
    if s.data.size != 1 or not np.all(np.isfinite(s.data)):
        raise InvalidInputError("score must be a finite scalar")
    if label not in (0, 1):
        raise InvalidInputError(f"label must be 0 or 1, got {label!r}")
    x = s.data
    out = np.maximum(x, 0.0) - x * label + np.log1p(np.exp(-np.abs(x)))
    prob = _stable_sigmoid(x)
    return _result(out, (s,), lambda g: (g * (prob - label),))


# Parameter storage

class ParamStore:
    """Named, fixed-shape float64 tensors."""

    def __init__(self, entries: Optional[Mapping[str, np.ndarray]] = None):
        self._entries: dict[str, np.ndarray] = {}
        for name, values in (entries or {}).items():
            self.add(name, values)

    def add(self, name: str, values) -> None:
        array = np.array(values, dtype=np.float64)
        if array.ndim == 0:
            raise InvalidInputError(f"{name}: shapes need at least one dimension")
        if any(dim <= 0 for dim in array.shape):
            raise InvalidInputError(f"{name}: shape {array.shape} has a zero dimension")
        if not np.all(np.isfinite(array)):
            raise InvalidInputError(f"{name}: values must be finite")
        self._entries[name] = array

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def shape(self, name: str) -> tuple:
        return self._entries[name].shape

    def values(self, name: str) -> np.ndarray:
        """Flat view of one entry (writes go through to the store)."""
        return self._entries[name].reshape(-1)

    def size(self) -> int:
        return sum(a.size for a in self._entries.values())

    def congruent(self, other: "ParamStore") -> bool:
        if set(self.names()) != set(other.names()):
            return False
        return all(self.shape(n) == other.shape(n) for n in self._entries)

    def copy(self) -> "ParamStore":
        return type(self)({n: a.copy() for n, a in self._entries.items()})

    def track(self) -> dict[str, Tensor]:
        """Gradient-requiring leaves that share this store's memory."""
        return {n: Tensor(a, requires_grad=True) for n, a in self._entries.items()}

    def constants(self) -> dict[str, Tensor]:
        return {n: Tensor(a) for n, a in self._entries.items()}

    def flatten(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([a.reshape(-1) for a in self._entries.values()])

    def max_abs(self) -> float:
        if not self._entries:
            return 0.0
        return max(float(np.max(np.abs(a))) for a in self._entries.values())

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self._entries):
            array = self._entries[name]
            digest.update(name.encode("utf-8"))
            digest.update(np.asarray(array.shape, dtype="<u4").tobytes())
            digest.update(array.astype("<f8").tobytes())
        return digest.hexdigest()

    def assign(self, other: "ParamStore") -> None:
        """Overwrite every value in place from a congruent store."""
        if not self.congruent(other):
            raise InvalidInputError("cannot assign from a non-congruent store")
        for name, array in self._entries.items():
            array[...] = other[name]

    def apply_update(self, grads: "GradStore", scale: float) -> None:
        """values += scale * grads, committed only if every result is sane."""
        if not self.congruent(grads):
            raise InvalidInputError("gradient store is not congruent with parameters")
        if not grads.is_finite():
            raise TrainingDivergenceError(
                f"non-finite gradient in {grads.first_non_finite()}"
            )
        if scale == 0:
            return
        updated = {n: a + scale * grads[n] for n, a in self._entries.items()}
        for name, array in updated.items():
            if not np.all(np.isfinite(array)):
                raise TrainingDivergenceError(f"{name} became non-finite")
            peak = float(np.max(np.abs(array)))
            if peak > DIVERGENCE_GUARD:
                raise TrainingDivergenceError(
                    f"{name} reached magnitude {peak:.3g} (guard {DIVERGENCE_GUARD:g})"
                )
        for name, array in updated.items():
            self._entries[name][...] = array


class GradStore(ParamStore):
    """One gradient slot per named tensor of a ParamStore."""

    def add(self, name: str, values) -> None:
        array = np.array(values, dtype=np.float64)
        if array.ndim == 0:
            raise InvalidInputError(f"{name}: shapes need at least one dimension")
        self._entries[name] = array

    @classmethod
    def zeros_like(cls, store: ParamStore) -> "GradStore":
        return cls({n: np.zeros_like(a) for n, a in store.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self._entries.values())

    def first_non_finite(self) -> Optional[str]:
        for name, array in self._entries.items():
            if not np.all(np.isfinite(array)):
                return name
        return None

    def accumulate(self, other: "GradStore", weight: float = 1.0) -> None:
        for name, array in self._entries.items():
            array += weight * other[name]

    def scaled(self, factor: float) -> "GradStore":
        return GradStore({n: a * factor for n, a in self._entries.items()})


class Adam:
    """Bias-corrected moment estimates for descending one ParamStore.

    Moments advance only when the parameter update commits, so a step
    rejected by the divergence guard leaves the optimizer unchanged.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not np.isfinite(lr) or lr < 0:
            raise InvalidInputError(f"learning rate must be finite and non-negative, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise InvalidInputError(f"moment decays must lie in [0, 1), got {beta1} and {beta2}")
        if eps <= 0:
            raise InvalidInputError(f"eps must be positive, got {eps}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self.first: Optional[GradStore] = None
        self.second: Optional[GradStore] = None

    def direction(self, grads: GradStore) -> tuple[GradStore, GradStore, GradStore]:
        """(step direction, next first moment, next second moment)."""
        first = self.first if self.first is not None else GradStore.zeros_like(grads)
        second = self.second if self.second is not None else GradStore.zeros_like(grads)
        if not first.congruent(grads):
            raise InvalidInputError("gradient store does not match the optimizer's moments")
        t = self.steps + 1
        new_first = GradStore({
            n: self.beta1 * first[n] + (1.0 - self.beta1) * g for n, g in grads.items()
        })
        new_second = GradStore({
            n: self.beta2 * second[n] + (1.0 - self.beta2) * g * g for n, g in grads.items()
        })
        first_fix = 1.0 - self.beta1 ** t
        second_fix = 1.0 - self.beta2 ** t
        step = GradStore({
            n: (new_first[n] / first_fix) / (np.sqrt(new_second[n] / second_fix) + self.eps)
            for n in grads.names()
        })
        return step, new_first, new_second

    def step(self, params: ParamStore, grads: GradStore) -> None:
        """Descend ``grads`` by one Adam step."""
        if not grads.is_finite():
            raise TrainingDivergenceError(f"non-finite gradient in {grads.first_non_finite()}")
        step, new_first, new_second = self.direction(grads)
        params.apply_update(step, -self.lr)
        self.first, self.second = new_first, new_second
        self.steps += 1


def backward(loss: Tensor, leaves: Mapping[str, Tensor]) -> GradStore:
    """Gradient of a scalar loss with respect to every named leaf.

    Leaves the forward pass never touched get a zero gradient.
    """
    if not isinstance(loss, Tensor):
        raise StructuralError(f"expected a recorded Tensor, got {type(loss).__name__}")
    if loss.data.size != 1:
        raise StructuralError(f"loss must be a scalar, got shape {loss.data.shape}")
    for leaf in leaves.values():
        leaf.grad = None
    loss.backward()
    return GradStore({
        name: (leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data))
        for name, leaf in leaves.items()
    })


def finite_diff_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: ParamStore,
    h: float = 1e-5,
) -> float:
    """Max relative error between backward() and central differences.

    ``f`` maps a dict of named tensors to a scalar Tensor. The relative
    error denominator is max(|analytic|, |numeric|, 1e-8).
    """
    if h <= 0:
        raise InvalidInputError(f"step h must be positive, got {h}")

    leaves = params.track()
    analytic = backward(as_tensor(f(leaves)), leaves)

    def evaluate() -> float:
        return float(as_tensor(f(params.constants())).item())

    if evaluate() != evaluate():
        raise ContractError("function under test is not deterministic")

    worst = 0.0
    for name in params.names():
        flat = params.values(name)
        grad_flat = analytic.values(name)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = evaluate()
            flat[i] = original - h
            minus = evaluate()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * h)
            exact = grad_flat[i]
            denom = max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, abs(exact - numeric) / denom)
    return worst
