"""Transducer lattice losses: RNN-T, FastEmit and alignment-restricted RNN-T.

All recursions run in log space; masked transitions are ``-inf``.
The alpha/beta recursion itself lives in :mod:`upl_lab.kernels`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DegenerateAlignmentError, EmptyPathSetError, InstanceTooLargeError, InvalidInputError
from .model import BLANK, LogitLattice, log_softmax


@dataclass(frozen=True)
class Vanilla:
    name = "vanilla"

    def to_dict(self):
        return {"kind": self.name}


@dataclass(frozen=True)
class FastEmit:
    lam: float = 0.004
    name = "fastemit"

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidInputError("FastEmit lambda must be >= 0")

    def to_dict(self):
        return {"kind": self.name, "lambda": self.lam}


@dataclass(frozen=True)
class AlignmentRestricted:
    b_left: int = 0
    b_right: int = 6
    name = "ar"

    def __post_init__(self):
        if self.b_left < 0 or self.b_right < 0:
            raise InvalidInputError("alignment buffers must be >= 0")

    def to_dict(self):
        return {"kind": self.name, "b_left": self.b_left, "b_right": self.b_right}


LossKind = Vanilla | FastEmit | AlignmentRestricted


def loss_kind_from_dict(d: dict) -> LossKind:
    kind = d.get("kind", "vanilla")
    if kind == "vanilla":
        return Vanilla()
    if kind == "fastemit":
        return FastEmit(float(d.get("lambda", 0.004)))
    if kind == "ar":
        return AlignmentRestricted(int(d.get("b_left", 0)), int(d.get("b_right", 6)))
    raise InvalidInputError(f"unknown loss kind {kind!r}")


@dataclass
class LossResult:
    value: float
    grad: np.ndarray  # dLoss/dlogit, (T', U+1, K)
    blank_grad: np.ndarray  # dLoss/d log p(blank) per node, (T', U+1)
    label_grad: np.ndarray  # dLoss/d log p(next label) per node, (T', U)
    log_likelihood: float


def _values(lattice) -> np.ndarray:
    v = lattice.values if isinstance(lattice, LogitLattice) else np.asarray(lattice, dtype=np.float64)
    if v.ndim != 3:
        raise InvalidInputError(f"lattice must be 3-d, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("lattice contains non-finite values")
    return v


def _transition_logprobs(logits: np.ndarray, target: Sequence[int]):
    T, U1, K = logits.shape
    U = len(target)
    if U1 != U + 1:
        raise InvalidInputError(f"lattice has {U1} prefix rows, target needs {U + 1}")
    if any(not 1 <= y < K for y in target):
        raise InvalidInputError(f"target tokens must be in [1, {K - 1}]")
    if U > T:
        raise EmptyPathSetError(f"target length {U} exceeds lattice frames {T}")
    lp = log_softmax(logits)
    blank = lp[:, :, BLANK].copy()
    idx = np.asarray(target, dtype=np.int64)
    label = lp[:, np.arange(U), idx] if U else np.zeros((T, 0))
    return lp, blank, np.ascontiguousarray(label)


def _node_grads(alpha, beta, blank, label, ll):
    """dLoss/d(blank logprob) and dLoss/d(label logprob) at every node."""
    T, U1 = blank.shape
    nxt = np.full((T, U1), -np.inf)
    nxt[:-1] = beta[1:]
    nxt[-1, -1] = 0.0  # terminal blank
    with np.errstate(invalid="ignore"):
        gb = -np.exp(alpha + blank + nxt - ll)
        gl = -np.exp(alpha[:, :-1] + label + beta[:, 1:] - ll)
    return np.nan_to_num(gb, nan=0.0), np.nan_to_num(gl, nan=0.0)


def _chain(lp, target, gb, gl):
    """Push node gradients through log-softmax to the logits."""
    T, U1, K = lp.shape
    g_lp = np.zeros_like(lp)
    g_lp[:, :, BLANK] = gb
    U = len(target)
    if U:
        g_lp[:, np.arange(U), np.asarray(target)] += gl
    probs = np.exp(lp)
    return g_lp - probs * g_lp.sum(axis=-1, keepdims=True)


def _run(logits, target, label_mask=None, label_scale=1.0):
    lp, blank, label = _transition_logprobs(logits, target)
    if label_mask is not None:
        label = np.where(label_mask, label, -np.inf)
    alpha, beta, ll = kernels.forward_backward(blank, label)
    if ll == -math.inf:
        return None, alpha
    gb, gl = _node_grads(alpha, beta, blank, label, ll)
    gl = gl * label_scale
    grad = _chain(lp, target, gb, gl)
    return LossResult(-ll, grad, gb, gl, ll), alpha


def rnnt_loss(lattice, target: Sequence[int]) -> LossResult:
    target = [int(t) for t in target]
    res, _ = _run(_values(lattice), target)
    if res is None:
        raise EmptyPathSetError("no lattice path has non-zero probability")
    return res


def fastemit_loss(lattice, target: Sequence[int], lam: float) -> LossResult:
    """Vanilla value; label-transition node gradients scaled by (1 + lam) before the softmax chain."""
    if lam < 0:
        raise InvalidInputError("lambda must be >= 0")
    target = [int(t) for t in target]
    res, _ = _run(_values(lattice), target, label_scale=1.0 + lam)
    if res is None:
        raise EmptyPathSetError("no lattice path has non-zero probability")
    return res


def alignment_band(label_frames: Sequence[int], stride: int, b_left: int, b_right: int, T: int) -> np.ndarray:
    """Boolean (T, U) mask: emission of token u allowed at encoder frame t."""
    t = np.arange(T)[:, None]
    a = np.asarray([f // stride for f in label_frames], dtype=np.int64)[None, :]
    return (t >= a - b_left) & (t <= a + b_right)


def ar_rnnt_loss(lattice, target: Sequence[int], alignments: Sequence[int], b_left: int = 0, b_right: int = 6, stride: int | None = None) -> LossResult:
    """``alignments`` are per-token ground-truth frames in source-frame units."""
    v = _values(lattice)
    target = [int(t) for t in target]
    if len(alignments) != len(target):
        raise InvalidInputError("need one alignment frame per target token")
    if stride is None:
        stride = lattice.stride if isinstance(lattice, LogitLattice) else 1
    mask = alignment_band(alignments, stride, b_left, b_right, v.shape[0])
    res, alpha = _run(v, target, label_mask=mask)
    if res is None:
        reachable = np.isfinite(alpha).any(axis=0)
        first = int(np.argmin(reachable)) - 1 if not reachable.all() else len(target) - 1
        raise DegenerateAlignmentError(
            f"alignment band blocks every path; first blocked token index {first}", token_index=first
        )
    return res


def compute_loss(kind: LossKind, lattice: LogitLattice, target, label_frames) -> LossResult:
    if isinstance(kind, FastEmit):
        return fastemit_loss(lattice, target, kind.lam)
    if isinstance(kind, AlignmentRestricted):
        return ar_rnnt_loss(lattice, target, label_frames, kind.b_left, kind.b_right, lattice.stride)
    return rnnt_loss(lattice, target)


def brute_force_loss(lattice, target: Sequence[int], band: np.ndarray | None = None) -> float:
    """Negative log of the summed probability of every monotonic path.

    ``band`` is an optional boolean (T', U) mask of allowed label emissions.
    Refuses lattices with T' > 6 or U > 4.
    """
    v = lattice.values if isinstance(lattice, LogitLattice) else np.asarray(lattice, dtype=np.float64)
    target = [int(t) for t in target]
    T, U1, _ = v.shape
    U = len(target)
    if T > 6 or U > 4:
        raise InstanceTooLargeError(f"brute force limited to T'<=6, U<=4 (got {T}, {U})")
    if U > T:
        raise EmptyPathSetError(f"target length {U} exceeds lattice frames {T}")
    lp = log_softmax(v)
    terms = []
    n_moves = T - 1 + U
    for label_pos in itertools.combinations(range(n_moves), U):
        t = u = 0
        s = 0.0
        ok = True
        label_set = set(label_pos)
        for m in range(n_moves):
            if m in label_set:
                if band is not None and not band[t, u]:
                    ok = False
                    break
                s += lp[t, u, target[u]]
                u += 1
            else:
                s += lp[t, u, BLANK]
                t += 1
        if ok:
            terms.append(s + lp[T - 1, U, BLANK])
    if not terms:
        raise EmptyPathSetError("band excludes every path (-log 0)")
    m = max(terms)
    return -(m + math.log(sum(math.exp(x - m) for x in terms)))


def count_paths(T: int, U: int) -> int:
    return math.comb(T - 1 + U, U)
