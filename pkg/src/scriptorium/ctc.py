"""CTC loss with analytic gradient, plus greedy and prefix-beam decoders.

The loss of a label sequence l given per-timestep log-probabilities u is

    loss = -log  sum over paths pi with collapse(pi) = l  of  prod_t p_t(pi_t)

computed with the forward-backward recursion over the blank-augmented label
(length 2|l|+1).  Everything runs in log space: at T around 64 the linear-
space products underflow float64.

The gradient is taken with respect to the raw log-probability entries as
free coordinates (the normalization constraint lives in the upstream
log-softmax node), which makes it directly checkable by finite differences:

    d loss / d u[t,k] = -(1/P) * sum over matching paths with pi_t = k
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag

NEG_INF = -np.inf


class InfeasibleTargetError(ValueError):
    """The label cannot be aligned: too few timesteps for its length/repeats."""


@dataclass(frozen=True)
class Alphabet:
    """Ordered symbol set; the blank takes the extra last index."""

    chars: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("alphabet contains duplicate symbols")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.chars)})

    def __len__(self) -> int:
        return len(self.chars)

    @property
    def blank(self) -> int:
        return len(self.chars)

    @property
    def num_classes(self) -> int:
        return len(self.chars) + 1

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[c] for c in text]
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} not in alphabet") from None

    def decode(self, indices) -> str:
        return "".join(self.chars[i] for i in indices)

    def __contains__(self, c: str) -> bool:
        return c in self._index


# A-Y plus the ten digits: 35 symbols, deliberately no 'Z'.
DEFAULT_ALPHABET = Alphabet(tuple("ABCDEFGHIJKLMNOPQRSTUVWXY0123456789"))


def collapse(path, blank: int) -> list[int]:
    """Merge adjacent repeats, then delete blanks."""
    out: list[int] = []
    prev = None
    for s in path:
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return out


def _augmented(target: list[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.intp)
    ext[1::2] = target
    return ext


def min_feasible_length(target: list[int]) -> int:
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(log_probs: np.ndarray, target: list[int], blank: int) -> tuple[float, np.ndarray]:
    """Forward-backward CTC loss and its gradient w.r.t. ``log_probs``.

    log_probs: (T, C) array of per-timestep log-probabilities.
    Returns (loss, grad) with grad the same shape as log_probs.
    Raises InfeasibleTargetError when T < |target| + adjacent repeats,
    which at this scale always means a label/width data bug.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    T, C = lp.shape
    target = list(target)
    if any(not (0 <= t < C) or t == blank for t in target):
        raise ValueError("target contains indices outside the alphabet")
    need = min_feasible_length(target)
    if T < need:
        raise InfeasibleTargetError(
            f"target of length {len(target)} (with repeats) needs at least "
            f"{need} timesteps, got {T}")

    ext = _augmented(target, blank)
    S = len(ext)
    emit = lp[:, ext]  # (T, S)

    # skip transition s-2 -> s is legal when ext[s] is a label differing
    # from ext[s-2]
    can_skip = np.zeros(S, dtype=bool)
    if S > 2:
        can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        move = np.logaddexp(prev[1:], prev[:-1])
        stay = np.concatenate(([prev[0]], move))
        skip = np.full(S, NEG_INF)
        skip[2:][can_skip[2:]] = prev[:-2][can_skip[2:]]
        alpha[t] = np.logaddexp(stay, skip) + emit[t]

    if S > 1:
        log_p = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    else:
        log_p = alpha[T - 1, S - 1]
    loss = -log_p

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        move = np.logaddexp(nxt[:-1], nxt[1:])
        stay = np.concatenate((move, [nxt[S - 1]]))
        skip = np.full(S, NEG_INF)
        # forward skip legality is a property of the landing state s+2
        lands = np.zeros(S, dtype=bool)
        lands[:-2] = can_skip[2:]
        skip[lands] = nxt[2:][can_skip[2:]]
        beta[t] = np.logaddexp(stay, skip) + emit[t]

    # posterior over augmented states; alpha and beta both include the
    # emission at t, so subtract it once
    post = alpha + beta - emit
    grad = np.zeros_like(lp)
    occ = np.full((T, C), NEG_INF)
    for s in range(S):
        occ[:, ext[s]] = np.logaddexp(occ[:, ext[s]], post[:, s])
    nz = occ > NEG_INF
    grad[nz] = -np.exp(occ[nz] - log_p)
    return float(loss), grad


def ctc_loss_node(log_probs: "ag.Tensor", target: list[int], blank: int) -> "ag.Tensor":
    """Autograd bridge: scalar CTC loss node using the analytic gradient."""
    loss, grad = ctc_loss(log_probs.data, target, blank)
    out = ag.Tensor(np.float64(loss), parents=[log_probs] if log_probs.requires_grad else [],
                    op="ctc_loss")
    out.requires_grad = log_probs.requires_grad
    if out.requires_grad:
        def bwd(g):
            ag._accum(log_probs, float(g) * grad)
        out._backward = bwd
    return out


def greedy_decode(log_probs: np.ndarray, alphabet: Alphabet) -> str:
    """Collapse the per-timestep argmax path."""
    path = np.asarray(log_probs).argmax(axis=1)
    return alphabet.decode(collapse(path, alphabet.blank))


def beam_decode(log_probs: np.ndarray, alphabet: Alphabet, beam_width: int = 8) -> str:
    """Prefix beam search over collapsed strings.

    Each surviving prefix carries separate log-masses for paths ending in
    blank and in its final symbol; extending and merging these is what lets
    probability sum over all paths that collapse to the same string.  With a
    beam wide enough that nothing is pruned the result is exact.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    lp = np.asarray(log_probs, dtype=np.float64)
    T, C = lp.shape
    blank = alphabet.blank

    # prefix (tuple of symbol ids) -> [log p ending in blank, log p ending in symbol]
    beams: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG_INF]}
    for t in range(T):
        row = lp[t]
        nxt: dict[tuple[int, ...], list[float]] = {}

        def bump(prefix, slot, value):
            if value == NEG_INF:
                return
            entry = nxt.setdefault(prefix, [NEG_INF, NEG_INF])
            entry[slot] = np.logaddexp(entry[slot], value)

        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            bump(prefix, 0, total + row[blank])
            last = prefix[-1] if prefix else None
            for k in range(C):
                if k == blank:
                    continue
                if k == last:
                    # repeat merges into the same prefix; only a blank in
                    # between starts a genuinely new symbol
                    bump(prefix, 1, pnb + row[k])
                    bump(prefix + (k,), 1, pb + row[k])
                else:
                    bump(prefix + (k,), 1, total + row[k])

        ranked = sorted(nxt.items(),
                        key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), kv[0]))
        beams = dict(ranked[:beam_width])

    best = min(beams.items(), key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), kv[0]))
    return alphabet.decode(best[0])
