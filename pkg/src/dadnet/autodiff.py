"""Tape-based reverse-mode differentiation over matrix-level primitives.

A program is an ordinary Python function built from ``@``, ``+``, ``-``,
scalar ``*``, ``.T``, indexing and the primitives in this module
(:func:`spd_factor`, :func:`spd_solve`, :func:`soft_threshold`,
:func:`norm_clip`, :func:`concat`, :func:`sqnorm`). Called on plain arrays
it runs untaped; called through :func:`record_forward` its arguments are
:class:`Var` leaves and every primitive appends a node to a :class:`Tape`.
Both paths issue the same numpy calls, so taped values are bit-identical
to untaped ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from dadnet import linalg
from dadnet.errors import InvalidArgumentError, UnsupportedOperationError


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    value: Any
    requires_grad: bool
    cache: dict = field(default_factory=dict)
    name: str | None = None


class Tape:
    """Ordered record of primitive evaluations; node ``i`` only references ``j < i``."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.output: int | None = None

    def __len__(self):
        return len(self.nodes)

    def push(self, op, inputs, value, cache=None, name=None, requires_grad=None) -> "Var":
        idx = len(self.nodes)
        if any(i >= idx for i in inputs):
            raise AssertionError("tape nodes must reference earlier nodes only")
        if requires_grad is None:
            requires_grad = any(self.nodes[i].requires_grad for i in inputs)
        self.nodes.append(Node(op, tuple(inputs), value, requires_grad, cache or {}, name))
        return Var(self, idx)

    def activation_pattern(self) -> tuple:
        """Active sets of every threshold and clip node, for kink detection."""
        pattern = []
        for node in self.nodes:
            if node.op == "soft_threshold":
                pattern.append(node.cache["mask"].tobytes())
            elif node.op == "norm_clip":
                pattern.append(np.atleast_1d(node.cache["outside"]).tobytes())
        return tuple(pattern)

    def kink_inputs(self) -> list:
        """``(input values, distance to kink)`` for every threshold and clip node."""
        out = []
        for node in self.nodes:
            if node.op == "soft_threshold":
                x = self.nodes[node.inputs[0]].value
                out.append((x, np.abs(np.abs(x) - node.cache["tau"])))
            elif node.op == "norm_clip":
                out.append((node.cache["norms"], np.abs(node.cache["norms"] - node.cache["B_out"])))
        return out


class Var:
    """Handle to a tape node. Supports the arithmetic the decoders use."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def node(self) -> Node:
        return self.tape.nodes[self.index]

    @property
    def value(self):
        return self.node.value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(op={self.node.op!r}, shape={getattr(self.value, 'shape', None)})"

    # numpy must not try to coerce a Var into an object array
    def __array_ufunc__(self, ufunc, method, *args, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedOperationError(f"unsupported numpy call {ufunc.__name__}.{method}")
        handlers = {
            np.add: _add,
            np.subtract: _sub,
            np.multiply: _mul,
            np.matmul: _matmul,
        }
        if ufunc is np.negative:
            return _neg(args[0])
        if ufunc in handlers and len(args) == 2:
            return handlers[ufunc](*args)
        raise UnsupportedOperationError(f"operation {ufunc.__name__} is not a tape primitive")

    def __array_function__(self, func, types, args, kwargs):
        raise UnsupportedOperationError(f"numpy function {func.__name__} is not a tape primitive")

    def __add__(self, other):
        return _add(self, other)

    def __radd__(self, other):
        return _add(other, self)

    def __sub__(self, other):
        return _sub(self, other)

    def __rsub__(self, other):
        return _sub(other, self)

    def __mul__(self, other):
        return _mul(self, other)

    def __rmul__(self, other):
        return _mul(other, self)

    def __matmul__(self, other):
        return _matmul(self, other)

    def __rmatmul__(self, other):
        return _matmul(other, self)

    def __neg__(self):
        return _neg(self)

    @property
    def T(self):
        return self.tape.push("transpose", (self.index,), self.value.T)

    def __getitem__(self, key):
        if not _is_basic_index(key):
            raise UnsupportedOperationError("only basic slicing is a tape primitive")
        return self.tape.push("slice", (self.index,), self.value[key], {"key": key})

    def __pow__(self, other):
        raise UnsupportedOperationError("power is not a tape primitive")

    def __truediv__(self, other):
        # x / c and x * (1 / c) round differently; only the latter is a primitive
        raise UnsupportedOperationError("division is not a tape primitive; multiply by the reciprocal")


def _is_basic_index(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, np.integer)) or k is Ellipsis for k in keys)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is not None and a.tape is not tape:
                raise InvalidArgumentError("cannot mix values from different tapes")
            tape = a.tape
    return tape


def _val(a):
    return a.value if isinstance(a, Var) else a


def _binary(op, fn, a, b, cache=None):
    tape = _tape_of(a, b)
    value = fn(_val(a), _val(b))
    if tape is None:
        return value
    ins, consts = [], {}
    for pos, arg in enumerate((a, b)):
        if isinstance(arg, Var):
            ins.append(arg.index)
        else:
            consts[pos] = arg
    cache = dict(cache or {})
    cache["slots"] = tuple(isinstance(arg, Var) for arg in (a, b))
    cache["consts"] = consts
    return tape.push(op, ins, value, cache)


def _add(a, b):
    return _binary("add", np.add, a, b)


def _sub(a, b):
    return _binary("sub", np.subtract, a, b)


def _mul(a, b):
    return _binary("mul", np.multiply, a, b)


def _matmul(a, b):
    return _binary("matmul", np.matmul, a, b)


def _neg(a):
    if not isinstance(a, Var):
        return np.negative(a)
    return a.tape.push("neg", (a.index,), np.negative(a.value))


# ---------------------------------------------------------------- primitives


def identity(x):
    return x


def spd_factor(M):
    """Factor ``M``; on the tape the node stands for ``M`` itself."""
    if not isinstance(M, Var):
        return linalg.spd_factor(M)
    return M.tape.push("factor", (M.index,), linalg.spd_factor(M.value))


def spd_solve(F, B):
    tape = _tape_of(F, B)
    value = linalg.spd_solve(_val(F), _val(B))
    if tape is None:
        return value
    ins = tuple(a.index for a in (F, B) if isinstance(a, Var))
    cache = {"slots": (isinstance(F, Var), isinstance(B, Var)), "factor": _val(F)}
    return tape.push("solve", ins, value, cache)


def soft_threshold(x, tau):
    tape = _tape_of(x, tau)
    tau_v = _val(tau)
    xv = _val(x)
    value = linalg.soft_threshold(xv, tau_v)
    if tape is None:
        return value
    ins = tuple(a.index for a in (x, tau) if isinstance(a, Var))
    cache = {
        "slots": (isinstance(x, Var), isinstance(tau, Var)),
        "mask": np.abs(xv) > tau_v,
        "tau": tau_v,
    }
    return tape.push("soft_threshold", ins, value, cache)


def norm_clip(x, B_out: float):
    if not isinstance(x, Var):
        return linalg.norm_clip(x, B_out)
    xv = x.value
    norms = linalg.column_norms(xv)
    value = linalg.norm_clip(xv, B_out)
    cache = {"norms": norms, "outside": norms > B_out, "B_out": B_out}
    return x.tape.push("norm_clip", (x.index,), value, cache)


def concat(parts, axis: int = 0):
    tape = _tape_of(*parts)
    vals = [_val(p) for p in parts]
    value = np.concatenate(vals, axis=axis)
    if tape is None:
        return value
    ins = tuple(p.index for p in parts if isinstance(p, Var))
    sizes = [v.shape[axis] for v in vals]
    cache = {"slots": tuple(isinstance(p, Var) for p in parts), "sizes": sizes, "axis": axis}
    return tape.push("concat", ins, value, cache)


def sqnorm(x):
    """Sum of squared entries."""
    if not isinstance(x, Var):
        return np.sum(x * x)
    return x.tape.push("sqnorm", (x.index,), np.sum(x.value * x.value))


# ------------------------------------------------------------------ recording


def record_forward(program: Callable, params: dict, inputs: dict | None = None):
    """Evaluate ``program(**params, **inputs)`` on a fresh tape.

    ``params`` are tracked (their gradients are returned by :func:`backward`);
    ``inputs`` enter the tape as untracked leaves.

    Returns
    -------
    (output value, Tape)
    """
    tape = Tape()
    kwargs = {}
    for name, value in params.items():
        kwargs[name] = tape.push("leaf", (), _as_array(value), name=name, requires_grad=True)
    for name, value in (inputs or {}).items():
        if isinstance(value, np.ndarray) or np.isscalar(value):
            kwargs[name] = tape.push("leaf", (), _as_array(value), name=name, requires_grad=False)
        else:
            kwargs[name] = value
    out = program(**kwargs)
    if not isinstance(out, Var):
        out = tape.push("leaf", (), _as_array(out), name="<constant output>", requires_grad=False)
    if out.tape is not tape:
        raise InvalidArgumentError("program returned a value from another tape")
    tape.output = out.index
    return out.value, tape


def _as_array(value):
    return np.asarray(value, dtype=np.float64)


@dataclass
class GradResult:
    """Vector-Jacobian products for every tracked parameter."""

    grads: dict[str, np.ndarray]
    loss_value: float | None = None

    def __getitem__(self, name):
        return self.grads[name]


def backward(tape: Tape, seed_gradient=None) -> GradResult:
    if tape.output is None:
        raise InvalidArgumentError("tape has no recorded output")
    out_node = tape.nodes[tape.output]
    out_value = np.asarray(out_node.value)
    if seed_gradient is None:
        if out_value.size != 1:
            raise InvalidArgumentError("a seed gradient is required for non-scalar outputs")
        seed_gradient = np.ones_like(out_value)
    seed_gradient = np.asarray(seed_gradient, dtype=np.float64)
    if seed_gradient.shape != out_value.shape:
        raise InvalidArgumentError(
            f"seed shape {seed_gradient.shape} does not match output shape {out_value.shape}"
        )

    grads: dict[int, np.ndarray] = {tape.output: seed_gradient}
    for idx in range(tape.output, -1, -1):
        g = grads.pop(idx, None) if tape.nodes[idx].op != "leaf" else grads.get(idx)
        node = tape.nodes[idx]
        if g is None or not node.requires_grad or node.op == "leaf":
            continue
        for in_idx, contrib in _VJP[node.op](tape, node, g):
            if not tape.nodes[in_idx].requires_grad:
                continue
            if in_idx in grads:
                grads[in_idx] = grads[in_idx] + contrib
            else:
                grads[in_idx] = contrib

    result = {}
    for idx, node in enumerate(tape.nodes):
        if node.op == "leaf" and node.requires_grad:
            g = grads.get(idx)
            result[node.name] = np.zeros_like(node.value) if g is None else np.asarray(g).reshape(node.value.shape)
    loss = float(out_value) if out_value.size == 1 else None
    return GradResult(result, loss)


# ------------------------------------------------------------ adjoint rules


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _shape(v):
    return np.shape(v)


def _operands(tape, node):
    """Values of both binary operands plus which slots are tape inputs."""
    slots = node.cache["slots"]
    it = iter(node.inputs)
    vals, idxs = [], []
    for pos, is_var in enumerate(slots):
        if is_var:
            i = next(it)
            idxs.append(i)
            vals.append(tape.nodes[i].value)
        else:
            idxs.append(None)
            vals.append(node.cache["consts"][pos])
    return vals, idxs


def _vjp_add(tape, node, g):
    vals, idxs = _operands(tape, node)
    return [(i, _unbroadcast(g, _shape(v))) for v, i in zip(vals, idxs) if i is not None]


def _vjp_sub(tape, node, g):
    vals, idxs = _operands(tape, node)
    out = []
    if idxs[0] is not None:
        out.append((idxs[0], _unbroadcast(g, _shape(vals[0]))))
    if idxs[1] is not None:
        out.append((idxs[1], _unbroadcast(-g, _shape(vals[1]))))
    return out


def _vjp_mul(tape, node, g):
    (a, b), (ia, ib) = _operands(tape, node)
    out = []
    if ia is not None:
        out.append((ia, _unbroadcast(g * b, _shape(a))))
    if ib is not None:
        out.append((ib, _unbroadcast(g * a, _shape(b))))
    return out


def _vjp_matmul(tape, node, g):
    (a, b), (ia, ib) = _operands(tape, node)
    a2 = a if a.ndim == 2 else a[None, :]
    b2 = b if b.ndim == 2 else b[:, None]
    g2 = np.reshape(g, (a2.shape[0], b2.shape[1]))
    out = []
    if ia is not None:
        out.append((ia, (g2 @ b2.T).reshape(a.shape)))
    if ib is not None:
        out.append((ib, (a2.T @ g2).reshape(b.shape)))
    return out


def _vjp_neg(tape, node, g):
    return [(node.inputs[0], -g)]


def _vjp_transpose(tape, node, g):
    return [(node.inputs[0], np.transpose(g))]


def _vjp_slice(tape, node, g):
    src = tape.nodes[node.inputs[0]].value
    full = np.zeros_like(src)
    full[node.cache["key"]] = g
    return [(node.inputs[0], full)]


def _vjp_factor(tape, node, g):
    # the factor node carries the adjoint of the matrix it factors
    return [(node.inputs[0], g)]


def _vjp_solve(tape, node, g):
    slots = node.cache["slots"]
    factor = node.cache["factor"]
    x = node.value
    gb = linalg.spd_solve(factor, g)
    out = []
    it = iter(node.inputs)
    if slots[0]:
        iF = next(it)
        gm = -(np.outer(gb, x) if x.ndim == 1 else gb @ x.T)
        out.append((iF, gm))
    if slots[1]:
        out.append((next(it), gb))
    return out


def _vjp_soft_threshold(tape, node, g):
    slots = node.cache["slots"]
    mask = node.cache["mask"]
    out = []
    it = iter(node.inputs)
    if slots[0]:
        out.append((next(it), g * mask))
    if slots[1]:
        ix = node.inputs[0] if slots[0] else None
        x = tape.nodes[ix].value if ix is not None else None
        if x is None:
            raise UnsupportedOperationError("threshold gradient needs a tracked input")
        gtau = -np.sum(g * np.sign(x) * mask)
        out.append((next(it), np.reshape(gtau, np.shape(node.cache["tau"]))))
    return out


def _vjp_norm_clip(tape, node, g):
    x = tape.nodes[node.inputs[0]].value
    norms = node.cache["norms"]
    outside = node.cache["outside"]
    B = node.cache["B_out"]
    if not np.any(outside):
        return [(node.inputs[0], g)]
    safe = np.where(outside, norms, 1.0)
    radial = np.sum(x * g, axis=0) / safe**2
    clipped = (B / safe) * (g - x * radial)
    return [(node.inputs[0], np.where(outside, clipped, g))]


def _vjp_concat(tape, node, g):
    axis = node.cache["axis"]
    bounds = np.cumsum(node.cache["sizes"])[:-1]
    pieces = np.split(g, bounds, axis=axis)
    it = iter(node.inputs)
    return [(next(it), piece) for piece, is_var in zip(pieces, node.cache["slots"]) if is_var]


def _vjp_sqnorm(tape, node, g):
    x = tape.nodes[node.inputs[0]].value
    return [(node.inputs[0], 2.0 * g * x)]


_VJP = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "matmul": _vjp_matmul,
    "neg": _vjp_neg,
    "transpose": _vjp_transpose,
    "slice": _vjp_slice,
    "factor": _vjp_factor,
    "solve": _vjp_solve,
    "soft_threshold": _vjp_soft_threshold,
    "norm_clip": _vjp_norm_clip,
    "concat": _vjp_concat,
    "sqnorm": _vjp_sqnorm,
}


# -------------------------------------------------------- gradient checking


@dataclass
class FdCheck:
    max_rel_error: float
    checked: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def finite_difference_check(loss, Phi, coords, step: float = 1e-6, kink_tol: float = 1e-8,
                            param: str = "Phi", inputs: dict | None = None) -> FdCheck:
    """Compare the taped gradient of ``loss`` against central differences.

    ``loss`` is a program taking the parameter as keyword ``param`` (plus
    any ``inputs``). A coordinate is skipped when its perturbation changes
    any active set, or moves an entry lying within ``kink_tol`` of its kink.
    """
    if step <= 0:
        raise InvalidArgumentError("step must be positive")
    Phi = np.asarray(Phi, dtype=np.float64)
    inputs = inputs or {}
    _, tape = record_forward(loss, {param: Phi}, inputs)
    grad = backward(tape)[param]
    base_pattern = tape.activation_pattern()
    base_kinks = tape.kink_inputs()

    def near_kink(perturbed):
        for (x0, dist), (x1, _) in zip(base_kinks, perturbed.kink_inputs()):
            if np.any((x1 != x0) & (dist < kink_tol)):
                return True
        return False

    report = FdCheck(0.0)
    for coord in coords:
        coord = tuple(coord)
        plus = Phi.copy()
        plus[coord] += step
        minus = Phi.copy()
        minus[coord] -= step
        f_plus, tape_plus = record_forward(loss, {param: plus}, inputs)
        f_minus, tape_minus = record_forward(loss, {param: minus}, inputs)
        if (tape_plus.activation_pattern() != base_pattern
                or tape_minus.activation_pattern() != base_pattern
                or near_kink(tape_plus) or near_kink(tape_minus)):
            report.skipped.append(coord)
            continue
        fd = (float(f_plus) - float(f_minus)) / (2.0 * step)
        g = float(grad[coord])
        rel = abs(fd - g) / max(abs(fd), abs(g), 1e-12)
        report.checked.append(coord)
        report.max_rel_error = max(report.max_rel_error, rel)
    return report
