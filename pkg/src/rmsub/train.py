"""Gradient-based learning of per-node projection weights.

Trainable scores live in an unconstrained vector per tree node; the SOFT
top-k operator (entropy-regularized optimal transport between the scores
and a two-bin selected/unselected target, solved by Sinkhorn iteration)
turns scores into a smoothed top-Q0 indicator, and dividing by Q0 gives a
simplex weight vector for the weighted soft aggregation.  The loss is
binary cross-entropy with logits on the decoder's output LLRs; the logit
of "bit = 1" at position z is -llr(z).

Gradients come in two modes: "fd" runs central finite differences through
the plain numpy forward pass and is the reference; "reverse" differentiates
a torch mirror of the same forward computation and is the fast path.  The
two agree to within finite-difference accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .construct import CodeSpec
from .decode import DecoderConfig, decode_batch
from .project import ProjectionTree, _pair_arrays, build_projection_tree
from .sim import StopRule, awgn_llr, run_montecarlo, snr_convert

__all__ = [
    "WeightState",
    "NodeWeights",
    "TrainConfig",
    "TrainBatch",
    "soft_topk",
    "weights_from_scores",
    "loss",
    "gradient",
    "train",
    "pick_training_snr",
    "save_weights",
    "load_weights",
    "Adam",
]


# ---------------------------------------------------------------------------
# SOFT top-k


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def soft_topk(s, q0: int, eps: float, tol: float = 1e-6,
              max_iter: int = 500) -> np.ndarray:
    """Smoothed indicator of the q0 largest entries of s, summing to q0.

    Scores are squashed to (0, 1) by the logistic function (a smooth,
    strictly monotone rescaling that fixes the cost scale) and transported
    onto two anchors (1 for selected, 0 for unselected) with marginals
    (q0/Q, 1 - q0/Q) under entropic regularization eps; Sinkhorn iterations
    stop once the relative row-marginal residual drops below tol (or after
    max_iter rounds).  The output is Q times the mass sent to the selected
    anchor, a vector in [0, 1]^Q that tends to the exact 0/1 indicator of
    the q0 largest scores as eps -> 0.
    """
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    q = s.shape[0]
    if not 0 < q0 < q:
        raise ValueError("need 0 < q0 < Q")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if np.all(s == s[0]):
        # identical cost rows: the transport solves exactly to the uniform plan
        return np.full(q, q0 / q)
    x = np.exp(-np.logaddexp(0.0, -s))  # stable sigmoid
    cost = np.stack([(x - 1.0) ** 2, x ** 2], axis=1)  # (Q, 2)
    log_mu = np.full(q, -math.log(q))
    log_nu = np.log(np.array([q0 / q, 1.0 - q0 / q]))

    f = np.zeros(q)
    g = np.zeros(2)
    for _ in range(max_iter):
        f = -eps * _logsumexp((g[None, :] - cost) / eps + log_nu[None, :], axis=1)
        g = -eps * _logsumexp((f[:, None] - cost) / eps + log_mu[:, None], axis=0)
        log_plan = (f[:, None] + g[None, :] - cost) / eps + log_mu[:, None] + log_nu[None, :]
        row_residual = np.abs(np.exp(_logsumexp(log_plan, axis=1)) * q - 1.0).max()
        if row_residual < tol:
            break
    return q * np.exp(log_plan[:, 0])


# ---------------------------------------------------------------------------
# weight state


@dataclass
class NodeWeights:
    """Trainable scores of one tree node, aligned with its subspace list."""

    subspaces: tuple[int, ...]
    scores: np.ndarray


@dataclass
class WeightState:
    """Per-node score vectors plus the smoothing hyper-parameters."""

    nodes: dict[tuple[int, ...], NodeWeights]
    q0: int
    eps: float
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 500

    @classmethod
    def initialize(cls, tree: ProjectionTree, q0: int, eps: float,
                   **kw) -> "WeightState":
        """All-zero scores, i.e. the uniform weight vector at every node."""
        nodes = {node.path: NodeWeights(subspaces=node.subspaces,
                                        scores=np.zeros(len(node.subspaces)))
                 for node in tree.inner_nodes()}
        return cls(nodes=nodes, q0=q0, eps=eps, **kw)

    def node_weights(self, path) -> np.ndarray:
        nw = self.nodes[path]
        gamma = soft_topk(nw.scores, self.q0, self.eps,
                          tol=self.sinkhorn_tol, max_iter=self.sinkhorn_max_iter)
        return gamma / self.q0


def weights_from_scores(state: WeightState) -> dict[tuple[int, ...], np.ndarray]:
    """Simplex weight vector per node: soft_topk(scores) / Q0."""
    return {path: state.node_weights(path) for path in state.nodes}


# ---------------------------------------------------------------------------
# loss


def loss(final_llr, codeword) -> float:
    """Mean binary cross-entropy with logits between LLRs and codeword bits.

    The logit of "bit = 1" is -llr, so a correct confident decision costs
    ~0 and llr = 0 costs ln 2 regardless of the label.
    """
    llr = np.asarray(final_llr, dtype=np.float64)
    c = np.asarray(codeword, dtype=np.float64)
    if llr.shape != c.shape:
        raise ValueError("LLR and codeword shapes must match")
    signs = 1.0 - 2.0 * c
    return float(np.mean(np.logaddexp(0.0, -signs * llr)))


@dataclass
class TrainBatch:
    """One training batch: transmitted codewords and their channel LLRs."""

    codewords: np.ndarray
    llrs: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters; defaults are recorded in the weight file."""

    q0: int
    snr_db: float
    snr_metric: str = "snr"
    batch_size: int = 128
    iterations: int = 2000
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    eps: float = 0.1
    seed: int = 0
    grad_mode: str = "reverse"
    fd_step: float = 1e-3
    n_max: int = 3
    aggregation: str = "soft"
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 500


def _forward_loss_np(state: WeightState, tree: ProjectionTree, batch: TrainBatch,
                     config: TrainConfig) -> float:
    weights = weights_from_scores(state)
    cfg = DecoderConfig(kind="soft-subrpa", aggregation=config.aggregation,
                        n_max=config.n_max, early_exit=False)
    res = decode_batch(batch.llrs, tree, cfg, weights=weights)
    return loss(res.final_llrs, batch.codewords)


# ---------------------------------------------------------------------------
# torch mirror of the weighted forward pass


class _TorchDecoder:
    """Differentiable twin of the numpy soft-subRPA forward pass.

    Depth-1 trees (every child of the root a leaf, the r = 2 case) take a
    fast path that batches the per-subspace work over groups of equal-rank
    leaves; deeper trees recurse node by node.
    """

    def __init__(self, tree: ProjectionTree):
        import torch

        self.torch = torch
        self.tree = tree
        self.leaf = {}
        self.pairs = {}
        self.groups = None

        def prep(node):
            if node.is_leaf:
                from .project import build_u_and_codebook

                u, cb = (node.u, node.codebook)
                if cb is None:
                    u, cb = build_u_and_codebook(node.gen)
                rank = int(np.log2(u.shape[0]))
                u_ind = np.flatnonzero(u.any(axis=0))
                self.leaf[node.path] = (
                    torch.tensor(node.gen, dtype=torch.float64),
                    torch.tensor(1.0 - 2.0 * cb.astype(np.float64)),
                    torch.tensor(u_ind, dtype=torch.long),
                    rank,
                )
                return
            for z, child in zip(node.subspaces, node.children):
                lo, hi, coset_of, partner = _pair_arrays(node.n, z)
                self.pairs[(node.path, z)] = tuple(
                    torch.tensor(a, dtype=torch.long) for a in (lo, hi, coset_of, partner))
                prep(child)

        prep(tree.root)
        root = tree.root
        if not root.is_leaf and all(c.is_leaf for c in root.children):
            self.groups = self._build_groups(root)

    def _build_groups(self, root):
        """Bucket the root's leaf children by rank for batched evaluation."""
        import torch
        from .project import build_u_and_codebook

        by_rank: dict[int, list[int]] = {}
        for qi, child in enumerate(root.children):
            by_rank.setdefault(child.rank, []).append(qi)
        groups = []
        for rank in sorted(by_rank):
            idx = by_rank[rank]
            lo_l, hi_l, cos_l, part_l, ct_l, gb_l = [], [], [], [], [], []
            for qi in idx:
                child = root.children[qi]
                z = root.subspaces[qi]
                lo, hi, coset_of, partner = _pair_arrays(root.n, z)
                u, cb = (child.u, child.codebook)
                if cb is None:
                    u, cb = build_u_and_codebook(child.gen)
                u_ind = np.flatnonzero(u.any(axis=0))
                lo_l.append(lo), hi_l.append(hi)
                cos_l.append(coset_of), part_l.append(partner)
                ct_l.append(1.0 - 2.0 * cb.astype(np.float64))
                gb_l.append(child.gen[u_ind].astype(np.float64))
            groups.append(dict(
                rank=rank,
                q_idx=torch.tensor(idx, dtype=torch.long),
                lo=torch.tensor(np.array(lo_l), dtype=torch.long),
                hi=torch.tensor(np.array(hi_l), dtype=torch.long),
                coset_of=torch.tensor(np.array(cos_l), dtype=torch.long),
                partner=torch.tensor(np.array(part_l), dtype=torch.long),
                ct=torch.tensor(np.array(ct_l)),
                gen_basis=torch.tensor(np.array(gb_l)),
            ))
        return groups

    def _boxplus(self, a, b):
        t = self.torch.tanh(a / 2.0) * self.torch.tanh(b / 2.0)
        return 2.0 * self.torch.atanh(t.clamp(-(1.0 - 1e-12), 1.0 - 1e-12))

    def _soft_map(self, lp, node):
        torch = self.torch
        gp, ct, u_ind, rank = self.leaf[node.path]
        bsz = lp.shape[0]
        k = gp.shape[0]
        scores = lp @ ct.T
        l_inf = torch.zeros(bsz, k, dtype=torch.float64)
        if rank:
            cols = []
            for j in range(rank):
                s = scores.reshape(bsz, 1 << j, 2, 1 << (rank - 1 - j))
                max0 = s[:, :, 0, :].reshape(bsz, -1).max(dim=1).values
                max1 = s[:, :, 1, :].reshape(bsz, -1).max(dim=1).values
                cols.append(max0 - max1)
            l_inf[:, u_ind] = torch.stack(cols, dim=1)
        v = l_inf.unsqueeze(2) * gp.unsqueeze(0)
        absv = v.abs().masked_fill(v == 0, float("inf"))
        min_abs = absv.amin(dim=1)
        signs = 1.0 - 2.0 * (v < 0).sum(dim=1).remainder(2).to(torch.float64)
        zero = torch.zeros((), dtype=torch.float64)
        return torch.where(torch.isinf(min_abs), zero, signs * min_abs)

    def _soft_map_group(self, lq, grp):
        torch = self.torch
        bsz, g, _ = lq.shape
        rank = grp["rank"]
        if rank == 0:
            return torch.zeros_like(lq)
        scores = torch.einsum("bgn,gcn->bgc", lq, grp["ct"])  # (B, g, 2^R)
        cols = []
        for j in range(rank):
            s = scores.reshape(bsz, g, 1 << j, 2, 1 << (rank - 1 - j))
            max0 = s[:, :, :, 0, :].reshape(bsz, g, -1).max(dim=2).values
            max1 = s[:, :, :, 1, :].reshape(bsz, g, -1).max(dim=2).values
            cols.append(max0 - max1)
        l_basis = torch.stack(cols, dim=2)  # (B, g, R)
        v = l_basis.unsqueeze(3) * grp["gen_basis"].unsqueeze(0)  # (B, g, R, n')
        absv = v.abs().masked_fill(v == 0, float("inf"))
        min_abs = absv.amin(dim=2)
        signs = 1.0 - 2.0 * (v < 0).sum(dim=2).remainder(2).to(torch.float64)
        zero = torch.zeros((), dtype=torch.float64)
        return torch.where(torch.isinf(min_abs), zero, signs * min_abs)

    def _decode_flat(self, l, weights, config):
        torch = self.torch
        root = self.tree.root
        w = weights.get(root.path)
        if w is None:
            q = len(root.subspaces)
            w = torch.full((q,), 1.0 / q, dtype=torch.float64)
        bsz = l.shape[0]
        for _ in range(config.n_max):
            acc = torch.zeros_like(l)
            for grp in self.groups:
                lq = self._boxplus(l[:, grp["lo"]], l[:, grp["hi"]])  # (B, g, n/2)
                dec = self._soft_map_group(lq, grp)
                idx = grp["coset_of"].unsqueeze(0).expand(bsz, -1, -1)
                dec_full = torch.gather(dec, 2, idx)  # (B, g, n)
                lpart = l[:, grp["partner"]]
                if config.aggregation == "soft":
                    term = torch.tanh(dec_full / 2.0) * lpart
                else:
                    term = self._boxplus(dec_full, lpart)
                wg = w[grp["q_idx"]].unsqueeze(0).unsqueeze(2)
                acc = acc + (wg * term).sum(dim=1)
            l = acc
        return l

    def _decode(self, l, node, weights, config, depth):
        if node.is_leaf:
            return self._soft_map(l, node)
        if depth == 0 and self.groups is not None:
            return self._decode_flat(l, weights, config)
        torch = self.torch
        w = weights.get(node.path)
        if w is None:
            q = len(node.subspaces)
            w = torch.full((q,), 1.0 / q, dtype=torch.float64)
        iters = config.n_max if depth == 0 else 1
        for _ in range(iters):
            acc = torch.zeros_like(l)
            for qi, (z, child) in enumerate(zip(node.subspaces, node.children)):
                lo, hi, coset_of, partner = self.pairs[(node.path, z)]
                lq = self._boxplus(l[:, lo], l[:, hi])
                dec = self._decode(lq, child, weights, config, depth + 1)
                if config.aggregation == "soft":
                    term = torch.tanh(dec[:, coset_of] / 2.0) * l[:, partner]
                else:
                    term = self._boxplus(dec[:, coset_of], l[:, partner])
                acc = acc + w[qi] * term
            l = acc
        return l

    def _soft_topk(self, s, q0, eps, tol, max_iter):
        torch = self.torch
        q = s.shape[0]
        x = torch.sigmoid(s)
        cost = torch.stack([(x - 1.0) ** 2, x ** 2], dim=1)
        log_mu = torch.full((q,), -math.log(q), dtype=torch.float64)
        log_nu = torch.log(torch.tensor([q0 / q, 1.0 - q0 / q], dtype=torch.float64))
        f = torch.zeros(q, dtype=torch.float64)
        g = torch.zeros(2, dtype=torch.float64)
        for _ in range(max_iter):
            f = -eps * torch.logsumexp((g[None, :] - cost) / eps + log_nu[None, :], dim=1)
            g = -eps * torch.logsumexp((f[:, None] - cost) / eps + log_mu[:, None], dim=0)
            log_plan = ((f[:, None] + g[None, :] - cost) / eps
                        + log_mu[:, None] + log_nu[None, :])
            residual = (torch.exp(torch.logsumexp(log_plan, dim=1)) * q - 1.0).abs().max()
            if float(residual.detach()) < tol:
                break
        return q * torch.exp(log_plan[:, 0])

    def loss_and_grads(self, state: WeightState, batch: TrainBatch,
                       config: TrainConfig):
        torch = self.torch
        scores = {path: torch.tensor(nw.scores, dtype=torch.float64, requires_grad=True)
                  for path, nw in state.nodes.items()}
        weights = {path: self._soft_topk(s, state.q0, state.eps,
                                         state.sinkhorn_tol,
                                         state.sinkhorn_max_iter) / state.q0
                   for path, s in scores.items()}
        llrs = torch.tensor(batch.llrs, dtype=torch.float64)
        labels = torch.tensor(batch.codewords, dtype=torch.float64)
        out = self._decode(llrs, self.tree.root, weights, config, 0)
        signs = 1.0 - 2.0 * labels
        value = torch.nn.functional.softplus(-signs * out).mean()
        value.backward()
        grads = {path: s.grad.detach().numpy().copy() for path, s in scores.items()}
        return float(value.detach()), grads


# ---------------------------------------------------------------------------
# gradients and training


def gradient(config: TrainConfig, state: WeightState, batch: TrainBatch,
             tree: ProjectionTree, torch_decoder: "_TorchDecoder | None" = None):
    """(mean batch loss, per-node loss gradients w.r.t. the scores).

    Mode "reverse" differentiates the torch mirror of the forward pass;
    mode "fd" runs central finite differences (step config.fd_step) through
    the numpy forward and serves as the reference.
    """
    if config.grad_mode == "reverse":
        dec = torch_decoder or _TorchDecoder(tree)
        value, grads = dec.loss_and_grads(state, batch, config)
        return value, grads
    if config.grad_mode != "fd":
        raise ValueError(f"unknown grad_mode {config.grad_mode!r}")
    value = _forward_loss_np(state, tree, batch, config)
    grads = {}
    h = config.fd_step
    for path, nw in state.nodes.items():
        g = np.zeros_like(nw.scores)
        for i in range(nw.scores.shape[0]):
            orig = nw.scores[i]
            nw.scores[i] = orig + h
            up = _forward_loss_np(state, tree, batch, config)
            nw.scores[i] = orig - h
            down = _forward_loss_np(state, tree, batch, config)
            nw.scores[i] = orig
            g[i] = (up - down) / (2.0 * h)
        grads[path] = g
    return value, grads


class Adam:
    """Plain Adam with bias correction; state keyed like the parameter dict."""

    def __init__(self, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for key, p in params.items():
            g = grads[key]
            m = self.m.setdefault(key, np.zeros_like(p))
            v = self.v.setdefault(key, np.zeros_like(p))
            m += (1 - self.beta1) * (g - m)
            v += (1 - self.beta2) * (g * g - v)
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(spec: CodeSpec, config: TrainConfig,
          tree: ProjectionTree | None = None,
          progress=None) -> tuple[WeightState, list[float]]:
    """Learn projection weights by Adam on the weighted soft decoder.

    Each iteration samples a fresh batch of random codewords, transmits
    them over AWGN at the training SNR, decodes with the weights held fixed
    across the batch, and takes one optimizer step.  Returns the final
    state and the loss trace.  Aborts when the loss exceeds 10x its initial
    value for 50 consecutive iterations.
    """
    tree = tree or build_projection_tree(spec, "full")
    state = WeightState.initialize(tree, config.q0, config.eps,
                                   sinkhorn_tol=config.sinkhorn_tol,
                                   sinkhorn_max_iter=config.sinkhorn_max_iter)
    sigma = snr_convert(config.snr_metric, config.snr_db, spec.n, spec.k)
    rng = np.random.default_rng(config.seed)
    torch_decoder = _TorchDecoder(tree) if config.grad_mode == "reverse" else None
    adam = Adam(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
                eps=config.eps_adam)
    params = {path: nw.scores for path, nw in state.nodes.items()}
    trace: list[float] = []
    bad_streak = 0
    for it in range(config.iterations):
        u = rng.integers(0, 2, size=(config.batch_size, spec.k), dtype=np.uint8)
        c = spec.encode(u)
        batch = TrainBatch(codewords=c, llrs=awgn_llr(c, sigma, rng))
        value, grads = gradient(config, state, batch, tree, torch_decoder)
        adam.step(params, grads)
        trace.append(value)
        bad_streak = bad_streak + 1 if value > 10.0 * trace[0] else 0
        if bad_streak >= 50:
            raise RuntimeError(
                f"training diverged: loss {value:.4g} above 10x initial "
                f"{trace[0]:.4g} for 50 consecutive iterations (iteration {it})")
        if progress is not None:
            progress(it, value)
    return state, trace


def pick_training_snr(spec: CodeSpec, tree: ProjectionTree,
                      target_bler: float = 1e-3, offset_db: float = 1.0,
                      metric: str = "snr", lo_db: float = -2.0,
                      hi_db: float = 8.0, tol_db: float = 0.05,
                      stop: StopRule | None = None, seed: int = 0,
                      n_max: int = 3) -> float:
    """Training SNR heuristic: the full-projection soft-subRPA benchmark's
    crossing of target_bler, plus offset_db.

    Bisects the (monotone) BLER curve on [lo_db, hi_db]; raises when the
    target is not bracketed by the interval.
    """
    stop = stop or StopRule(min_trials=20_000, min_errors=50, max_trials=200_000)
    cfg = DecoderConfig(kind="soft-subrpa", n_max=n_max)

    def bler_at(db: float) -> float:
        res = run_montecarlo(spec, tree, cfg, [db], metric=metric, stop=stop, seed=seed)
        return res.points[0].bler

    f_lo, f_hi = bler_at(lo_db), bler_at(hi_db)
    if not (f_lo >= target_bler >= f_hi):
        raise ValueError(
            f"target BLER {target_bler:g} not bracketed on [{lo_db}, {hi_db}] dB "
            f"(endpoints {f_lo:g}, {f_hi:g})")
    lo, hi = lo_db, hi_db
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if bler_at(mid) >= target_bler:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) + offset_db


# ---------------------------------------------------------------------------
# weight file I/O


def save_weights(state: WeightState, path, meta: dict | None = None) -> None:
    """Line-oriented weight file: meta lines, then per-node score/weight rows."""
    lines = []
    meta = dict(meta or {})
    meta.setdefault("q0", state.q0)
    meta.setdefault("eps", state.eps)
    for key in sorted(meta):
        lines.append(f"meta {key} {meta[key]}")
    for node_path in sorted(state.nodes):
        label = "/".join(str(z) for z in node_path) or "root"
        lines.append(f"node {label}")
        w = state.node_weights(node_path)
        nw = state.nodes[node_path]
        for z, s, wq in zip(nw.subspaces, nw.scores, w):
            lines.append(f"{z} {float(s)!r} {float(wq)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_weights(path) -> tuple[WeightState, dict]:
    """Read a weight file back into a WeightState plus its metadata."""
    meta: dict = {}
    nodes: dict[tuple[int, ...], tuple[list[int], list[float]]] = {}
    current = None
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("meta "):
                _, key, value = line.split(maxsplit=2)
                meta[key] = value
                continue
            if line.startswith("node"):
                label = line[4:].strip()
                key = () if label in ("", "root") else tuple(int(t) for t in label.split("/"))
                current = nodes.setdefault(key, ([], []))
                continue
            if current is None:
                raise ValueError("weight file rows must follow a 'node' header")
            z, score, _w = line.split()
            current[0].append(int(z))
            current[1].append(float(score))
    q0 = int(meta.get("q0", 1))
    eps = float(meta.get("eps", 0.1))
    state = WeightState(
        nodes={path: NodeWeights(subspaces=tuple(zs), scores=np.array(ss))
               for path, (zs, ss) in nodes.items()},
        q0=q0, eps=eps)
    return state, meta
