"""Steady-state oracle: the truncated 3-D Markov chain solved exactly.

States are (i, j, k) = (queue+service, redial orbit, reconnect orbit)
on [0..N_Q] x [0..N_RD] x [0..N_RC], indexed lexicographically with i
outermost:

    index(i, j, k) = (i*(N_RD+1) + j)*(N_RC+1) + k

Transitions that would leave the box are redirected to self (reflection),
which keeps the generator conservative; the rate lost this way is kept
per state so truncation error can be reported against the solved pi.

Only small instances are tractable here; production-size scenarios are
exactly what the fluid approximation is for.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .model import ModelParams, ParameterError, validate

MAX_STATES = 10_000_000

# above this size the direct solve's LU fill-in gets out of hand on the
# 3-D lattice; fall back to the jump-chain iteration
DIRECT_LIMIT = 30_000


class CTMCError(RuntimeError):
    """Stationary solve failed (non-convergence or singular system)."""


@dataclass(frozen=True)
class TruncatedChain:
    """Finite generator of the model on a box, with reflection bookkeeping.

    ``generator`` is CSR with zero row sums; ``reflected`` holds, per
    state, the total rate of transitions that were redirected to self
    because the target fell outside the box.
    """

    params: ModelParams
    caps: tuple[int, int, int]
    generator: sp.csr_matrix
    reflected: np.ndarray

    @property
    def n_states(self) -> int:
        return self.generator.shape[0]

    def state_index(self, i: int, j: int, k: int) -> int:
        nq, nrd, nrc = self.caps
        if not (0 <= i <= nq and 0 <= j <= nrd and 0 <= k <= nrc):
            raise ParameterError(f"state ({i}, {j}, {k}) outside caps {self.caps}")
        return (i * (nrd + 1) + j) * (nrc + 1) + k

    def marginals(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Index arrays (i, j, k) aligned with the flat state indexing."""
        nq, nrd, nrc = self.caps
        ii, jj, kk = np.indices((nq + 1, nrd + 1, nrc + 1))
        return ii.ravel(), jj.ravel(), kk.ravel()


@dataclass(frozen=True)
class StationarySolution:
    pi: np.ndarray
    e_zq: float
    e_zrd: float
    e_zrc: float
    e_lambda: float
    residual: float
    redirected_rate: float      # expected reflected rate, events per minute
    redirected_fraction: float  # share of total transition flow reflected
    method: str
    iterations: int


def build_chain(params: ModelParams, caps: tuple[int, int, int]) -> TruncatedChain:
    """Assemble the truncated generator with reflecting boundaries.

    Transition rates out of (i, j, k): fresh arrivals lam to (i+1,j,k);
    service completions mu*min(i,s) split (1-q)/(q) between (i-1,j,k)
    and (i-1,j,k+1); abandonments theta*(i-s)^+ split (1-p)/(p) between
    (i-1,j,k) and (i-1,j+1,k); redials delta_rd*j to (i+1,j-1,k);
    reconnects delta_rc*k to (i+1,j,k-1).
    """
    validate(params)
    nq, nrd, nrc = caps
    if nq < 1 or nrd < 0 or nrc < 0:
        raise ParameterError(f"caps must satisfy N_Q >= 1, N_RD, N_RC >= 0, got {caps}")
    n = (nq + 1) * (nrd + 1) * (nrc + 1)
    if n > MAX_STATES:
        raise ParameterError(f"state space size {n} exceeds limit {MAX_STATES}")

    ii, jj, kk = np.indices((nq + 1, nrd + 1, nrc + 1))
    i = ii.ravel().astype(np.int64)
    j = jj.ravel().astype(np.int64)
    k = kk.ravel().astype(np.int64)
    idx = (i * (nrd + 1) + j) * (nrc + 1) + k

    in_service = np.minimum(i, params.s).astype(float)
    excess = np.maximum(i - params.s, 0).astype(float)

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    reflected = np.zeros(n)

    def add(rate: np.ndarray, di: int, dj: int, dk: int) -> None:
        ti, tj, tk = i + di, j + dj, k + dk
        inside = (ti >= 0) & (ti <= nq) & (tj >= 0) & (tj <= nrd) & (tk >= 0) & (tk <= nrc)
        live = rate > 0
        keep = inside & live
        rows.append(idx[keep])
        cols.append(((ti * (nrd + 1) + tj) * (nrc + 1) + tk)[keep])
        vals.append(rate[keep])
        lost = live & ~inside
        np.add.at(reflected, idx[lost], rate[lost])

    lam = np.full(n, params.lam)
    add(lam, +1, 0, 0)
    add(params.mu * in_service * (1.0 - params.q), -1, 0, 0)
    add(params.mu * in_service * params.q, -1, 0, +1)
    add(params.theta * excess * (1.0 - params.p), -1, 0, 0)
    add(params.theta * excess * params.p, -1, +1, 0)
    add(params.delta_rd * j.astype(float), +1, -1, 0)
    add(params.delta_rc * k.astype(float), +1, 0, -1)

    row = np.concatenate(rows)
    col = np.concatenate(cols)
    val = np.concatenate(vals)
    diag = -np.bincount(row, weights=val, minlength=n)
    gen = sp.coo_matrix(
        (np.concatenate([val, diag]),
         (np.concatenate([row, np.arange(n)]), np.concatenate([col, np.arange(n)]))),
        shape=(n, n),
    ).tocsr()
    gen.sum_duplicates()
    return TruncatedChain(params=params, caps=(nq, nrd, nrc), generator=gen,
                          reflected=reflected)


def _solve_direct(gen: sp.csr_matrix) -> np.ndarray:
    # replace the first balance equation with the normalization sum(pi)=1
    n = gen.shape[0]
    gt = gen.T.tocoo()
    keep = gt.row != 0
    rows = np.concatenate([np.zeros(n, dtype=np.int64), gt.row[keep]])
    cols = np.concatenate([np.arange(n), gt.col[keep]])
    vals = np.concatenate([np.ones(n), gt.data[keep]])
    a = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    b = np.zeros(n)
    b[0] = 1.0
    pi = spsolve(a, b)
    if not np.all(np.isfinite(pi)):
        raise CTMCError("direct solve returned non-finite values (singular system?)")
    np.maximum(pi, 0.0, out=pi)
    return pi / pi.sum()


def _solve_power(gen: sp.csr_matrix, x0: np.ndarray | None, tol: float,
                 max_iter: int) -> tuple[np.ndarray, int]:
    # jump-chain form: pi G = 0 iff y P = y for P = I + inv(L) G with
    # L_v = 1.05 * out_rate_v and y = pi * L. Scaling by the local
    # out-rate instead of the global maximum makes each sweep advance the
    # chain by roughly one transition everywhere, and the 5% slack keeps
    # self-loop probability positive so period-2 modes are damped.
    n = gen.shape[0]
    out_rate = -gen.diagonal()
    if np.any(out_rate <= 0):
        raise CTMCError("chain has an absorbing state; stationary solve "
                        "requires every state to have positive out-rate")
    lam_u = 1.05 * out_rate
    inv_lam = 1.0 / lam_u
    gt = gen.T.tocsr()

    if x0 is None:
        y = np.full(n, 1.0 / n)
    else:
        if x0.shape != (n,) or np.any(x0 < 0) or x0.sum() <= 0:
            raise CTMCError("x0 must be a nonnegative vector over the state space")
        y = x0 * lam_u
        y /= y.sum()

    check_every = 50
    best = np.inf
    stalled = 0
    for it in range(1, max_iter + 1):
        y = y + gt @ (inv_lam * y)
        y /= y.sum()
        if it % check_every == 0 or it == max_iter:
            pi = inv_lam * y
            pi /= pi.sum()
            residual = np.abs(gt @ pi).max()
            if residual <= tol:
                return pi, it
            if residual < 0.5 * best:
                best = residual
                stalled = 0
            else:
                stalled += 1
                if stalled >= 40:
                    raise CTMCError(
                        f"power iteration stalled at residual {residual:.3e} "
                        f"after {it} iterations (tol {tol:.1e})"
                    )
    pi = inv_lam * y
    pi /= pi.sum()
    residual = np.abs(gt @ pi).max()
    raise CTMCError(
        f"no convergence after {max_iter} iterations; residual {residual:.3e}"
    )


def solve_stationary(
    chain: TruncatedChain,
    method: str = "auto",
    x0: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> StationarySolution:
    """Solve pi G = 0, sum(pi) = 1 and report moments.

    ``method`` is "direct" (sparse LU on the normalized system),
    "power" (jump-chain power iteration, optionally warm-started from
    ``x0``), or "auto" which picks direct below ``DIRECT_LIMIT`` states.
    The returned residual is max |pi G| and must come out <= tol.
    """
    gen = chain.generator
    n = chain.n_states
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT and x0 is None else "power"
    if method == "direct":
        pi = _solve_direct(gen)
        iterations = 0
    elif method == "power":
        pi, iterations = _solve_power(gen, x0, tol, max_iter)
    else:
        raise ParameterError(f"unknown method {method!r}")

    residual = float(np.abs(gen.T @ pi).max())
    if residual > tol:
        raise CTMCError(f"solve residual {residual:.3e} exceeds tolerance {tol:.1e}")

    i, j, k = chain.marginals()
    e_zq = float(pi @ i)
    e_zrd = float(pi @ j)
    e_zrc = float(pi @ k)
    p = chain.params
    e_lambda = p.lam + p.delta_rd * e_zrd + p.delta_rc * e_zrc
    redirected_rate = float(pi @ chain.reflected)
    total_flow = float(pi @ (-gen.diagonal())) + redirected_rate
    redirected_fraction = redirected_rate / total_flow if total_flow > 0 else 0.0
    return StationarySolution(
        pi=pi, e_zq=e_zq, e_zrd=e_zrd, e_zrc=e_zrc, e_lambda=e_lambda,
        residual=residual, redirected_rate=redirected_rate,
        redirected_fraction=redirected_fraction, method=method,
        iterations=iterations,
    )


def embed_pi(pi: np.ndarray, caps: tuple[int, int, int],
             caps_big: tuple[int, int, int]) -> np.ndarray:
    """Pad a solved pi onto a larger box (zeros outside), for warm starts."""
    nq, nrd, nrc = caps
    bq, brd, brc = caps_big
    if bq < nq or brd < nrd or brc < nrc:
        raise ParameterError(f"target caps {caps_big} must dominate {caps}")
    small = pi.reshape(nq + 1, nrd + 1, nrc + 1)
    big = np.zeros((bq + 1, brd + 1, brc + 1))
    big[: nq + 1, : nrd + 1, : nrc + 1] = small
    return big.ravel()


def write_fixture_json(path: str | Path, chain: TruncatedChain,
                       solution: StationarySolution) -> None:
    """Persist params, caps, and solved moments as a regression fixture."""
    p = chain.params
    payload = {
        "params": {
            "lam": p.lam, "s": p.s, "mu": p.mu, "theta": p.theta,
            "p": p.p, "q": p.q, "delta_rd": p.delta_rd, "delta_rc": p.delta_rc,
        },
        "caps": list(chain.caps),
        "n_states": chain.n_states,
        "moments": {
            "e_zq": solution.e_zq,
            "e_zrd": solution.e_zrd,
            "e_zrc": solution.e_zrc,
            "e_lambda": solution.e_lambda,
        },
        "residual": solution.residual,
        "redirected_rate": solution.redirected_rate,
        "redirected_fraction": solution.redirected_fraction,
        "method": solution.method,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
