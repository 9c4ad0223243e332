"""Single-qubit process tomography of the memory channel.

The process matrix ``chi`` is written in the operator basis {I, X, Y, Z}:
``E(rho) = sum_mn chi_mn s_m rho s_n^dagger``. Internally the estimators work
with the Choi matrix ``J = sum_ij |i><j| (x) E(|i><j|)`` (input first), which
relates to ``chi`` through ``J = V chi V^dagger`` with ``V`` the column-stacked
Pauli matrices.

Inputs are the six states H, V, D, A, R, L; each is measured in the Z, X and
Y bases with two Wollaston ports, giving 36 cells of (trials, clicks).
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .polar import STATES

PAULI = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)
PAULI_LABELS = ("I", "X", "Y", "Z")
INPUTS = ("H", "V", "D", "A", "R", "L")
SETTINGS = ("Z", "X", "Y")
PORTS = ("+", "-")
EIGENSTATE = {("Z", "+"): "H", ("Z", "-"): "V", ("X", "+"): "D", ("X", "-"): "A", ("Y", "+"): "R", ("Y", "-"): "L"}

# columns are vec(sigma_m) with vec(A)[2i + k] = A[k, i]
_V = np.stack([p.T.reshape(-1) for p in PAULI], axis=1)


def _proj(label: str) -> np.ndarray:
    v = STATES[label]
    return np.outer(v, v.conj())


# measurement operators rho_in^T (x) Pi for every cell, shape (6, 3, 2, 4, 4)
_OPS = np.array(
    [[[np.kron(_proj(i).T, _proj(EIGENSTATE[(s, p)])) for p in PORTS] for s in SETTINGS] for i in INPUTS]
)


class ZeroMatrixError(ValueError):
    pass


class NonPureTargetError(ValueError):
    pass


class SingularSystemError(ValueError):
    pass


def chi_to_choi(chi: np.ndarray) -> np.ndarray:
    return _V @ chi @ _V.conj().T


def choi_to_chi(choi: np.ndarray) -> np.ndarray:
    return _V.conj().T @ choi @ _V / 4.0


def apply_chi(chi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return np.einsum("mn,mab,bc,ndc->ad", chi, PAULI, rho, PAULI.conj())


def partial_trace_output(choi: np.ndarray) -> np.ndarray:
    return np.einsum("ikjk->ij", choi.reshape(2, 2, 2, 2))


def tp_defect(chi: np.ndarray) -> float:
    """Largest deviation of ``sum_mn chi_mn s_n^dag s_m`` from the identity."""
    s = sum(chi[m, n] * PAULI[n].conj().T @ PAULI[m] for m in range(4) for n in range(4))
    return float(np.max(np.abs(s - np.eye(2))))


def identity_chi() -> np.ndarray:
    chi = np.zeros((4, 4), dtype=complex)
    chi[0, 0] = 1.0
    return chi


def depolarizing_chi(weight: float = 1.0) -> np.ndarray:
    """``(1 - weight) * identity + weight * fully depolarizing``."""
    return (1 - weight) * identity_chi() + weight * np.eye(4) / 4.0


def unitary_chi(u: np.ndarray) -> np.ndarray:
    m = pauli_coefficients(u)
    return np.outer(m, m.conj())


def pauli_coefficients(m: np.ndarray) -> np.ndarray:
    return np.array([np.trace(p.conj().T @ m) / 2.0 for p in PAULI])


@dataclass(frozen=True)
class NoiseModel:
    mean_photon_number: float = 0.8
    memory_efficiency: float = 0.069
    detection_efficiency: float = 0.4
    path_transmission: float = 0.6
    dark_prob_per_gate: float = 5e-6
    gate_ns: float = 50.0

    def __post_init__(self):
        if not self.mean_photon_number > 0:
            raise ValueError("mean_photon_number must be > 0")
        for name in ("memory_efficiency", "detection_efficiency", "path_transmission", "dark_prob_per_gate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not self.gate_ns > 0:
            raise ValueError("gate_ns must be > 0")

    @property
    def signal_prob(self) -> float:
        """Probability of at least one detected echo photon per gate (threshold detector)."""
        mu_eff = (
            self.mean_photon_number * self.memory_efficiency * self.detection_efficiency * self.path_transmission
        )
        return float(-np.expm1(-mu_eff))

    @property
    def noise_fraction(self) -> float:
        dark, sig = self.dark_prob_per_gate, self.signal_prob
        if dark + sig == 0:
            return 1.0
        return dark / (dark + sig)


def channel_from_jones(m: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """Post-selected channel of a Jones map mixed with white noise from dark counts."""
    m = np.asarray(m, dtype=complex)
    if not np.any(np.abs(m) > 0):
        raise ZeroMatrixError("Jones matrix is zero")
    c = pauli_coefficients(m)
    pure = np.outer(c, c.conj()) / np.vdot(c, c).real
    lam = noise.noise_fraction
    return (1 - lam) * pure + lam * np.eye(4) / 4.0


@dataclass(frozen=True)
class TomographyDataset:
    """Trials and clicks indexed as ``[input, setting, port]`` (shape 6 x 3 x 2).

    ``clicks`` may hold non-integer expected counts when built by
    :func:`expected_dataset` for exact round-trip checks.
    """

    trials: np.ndarray
    clicks: np.ndarray

    def __post_init__(self):
        for name in ("trials", "clicks"):
            if np.shape(getattr(self, name)) != (6, 3, 2):
                raise ValueError(f"{name} must have shape (6, 3, 2)")
        if np.any(self.clicks < 0) or np.any(self.clicks > self.trials):
            raise ValueError("need 0 <= clicks <= trials in every cell")

    def rows(self):
        for a, i in enumerate(INPUTS):
            for b, s in enumerate(SETTINGS):
                for c, p in enumerate(PORTS):
                    yield i, s, p, self.trials[a, b, c], self.clicks[a, b, c]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["input", "setting", "port", "trials", "clicks"])
            for i, s, p, t, c in self.rows():
                w.writerow([i, s, p, _num(t), _num(c)])

    @classmethod
    def from_csv(cls, path) -> "TomographyDataset":
        trials = np.zeros((6, 3, 2), dtype=np.int64)
        clicks = np.zeros((6, 3, 2), dtype=np.int64)
        seen = set()
        floats = False
        rows = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append(row)
                floats |= any(not _is_int(row[k]) for k in ("trials", "clicks"))
        if floats:
            trials, clicks = trials.astype(float), clicks.astype(float)
        conv = float if floats else int
        for row in rows:
            key = (INPUTS.index(row["input"]), SETTINGS.index(row["setting"]), PORTS.index(row["port"]))
            trials[key] = conv(row["trials"])
            clicks[key] = conv(row["clicks"])
            seen.add(key)
        if len(seen) != 36:
            raise ValueError(f"dataset has {len(seen)} of 36 cells")
        return cls(trials, clicks)


def _num(x):
    if isinstance(x, (int, np.integer)):
        return int(x)
    return repr(float(x))


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def cell_probabilities(chi: np.ndarray) -> np.ndarray:
    """``Tr(Pi E(rho_in))`` for every cell."""
    choi = chi_to_choi(chi)
    return np.einsum("...ab,ba->...", _OPS, choi).real


def simulate_counts(chi: np.ndarray, noise: NoiseModel, trials_per_setting: int, seed: int) -> TomographyDataset:
    """Binomial click counts for every cell: ``p = signal * Tr(Pi E(rho)) + dark``."""
    if trials_per_setting < 1:
        raise ValueError("trials_per_setting must be >= 1")
    p = noise.signal_prob * cell_probabilities(chi) + noise.dark_prob_per_gate
    p = np.clip(p, 0.0, 1.0)
    rng = np.random.default_rng(seed)
    trials = np.full((6, 3, 2), int(trials_per_setting), dtype=np.int64)
    return TomographyDataset(trials, rng.binomial(trials, p))


def expected_dataset(chi: np.ndarray, trials: float = 1.0, noise: NoiseModel | None = None) -> TomographyDataset:
    """Expected (mean) counts: the infinite-statistics limit.

    Without ``noise`` the click probability is ``Tr(Pi E(rho))``; with it,
    the same signal-plus-dark model as :func:`simulate_counts`.
    """
    p = cell_probabilities(chi)
    if noise is not None:
        p = noise.signal_prob * p + noise.dark_prob_per_gate
    p = np.clip(p, 0.0, 1.0)
    t = np.full((6, 3, 2), float(trials))
    return TomographyDataset(t, t * p)


def _output_states(data: TomographyDataset) -> dict[str, np.ndarray]:
    n = np.asarray(data.clicks, dtype=float)
    tot = n.sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        stokes = np.where(tot > 0, (n[..., 0] - n[..., 1]) / tot, 0.0)
    out = {}
    for a, label in enumerate(INPUTS):
        sz, sx, sy = stokes[a]
        out[label] = 0.5 * (PAULI[0] + sx * PAULI[1] + sy * PAULI[2] + sz * PAULI[3])
    return out


def linear_inversion_chi(data: TomographyDataset) -> np.ndarray:
    """Standard linear inversion from the H, V, D, R output states.

    Output Stokes vectors come from port asymmetries, so the estimate is trace
    preserving by construction but may have negative eigenvalues.
    """
    if np.any(np.asarray(data.trials) <= 0):
        raise ValueError("every cell needs trials > 0")
    rho = _output_states(data)
    missing = [k for k in ("H", "V", "D", "R") if k not in rho]
    if missing:
        raise SingularSystemError(f"inputs {missing} are required for linear inversion")
    e00, e11 = rho["H"], rho["V"]
    e01 = rho["D"] + 1j * rho["R"] - 0.5 * (1 + 1j) * (e00 + e11)
    blocks = [[e00, e01], [e01.conj().T, e11]]
    choi = np.zeros((4, 4), dtype=complex)
    for i in range(2):
        for j in range(2):
            choi[2 * i : 2 * i + 2, 2 * j : 2 * j + 2] = blocks[i][j]
    chi = choi_to_chi(choi)
    return 0.5 * (chi + chi.conj().T)


def log_likelihood(chi: np.ndarray, data: TomographyDataset) -> float:
    """Binomial log-likelihood of the port split in every (input, setting) pair."""
    return _loglik(chi_to_choi(chi), np.asarray(data.clicks, dtype=float))


def _loglik(choi: np.ndarray, n: np.ndarray) -> float:
    p = np.einsum("...ab,ba->...", _OPS, choi).real
    mask = n > 0
    if not np.any(mask):
        return 0.0
    with np.errstate(divide="ignore"):
        return float(np.sum(n[mask] * np.log(p[mask])))


def _tp_normalize(x: np.ndarray) -> np.ndarray:
    lam = partial_trace_output(x)
    w, u = np.linalg.eigh(0.5 * (lam + lam.conj().T))
    inv_sqrt = u @ np.diag(1.0 / np.sqrt(w)) @ u.conj().T
    k = np.kron(inv_sqrt, np.eye(2))
    y = k @ x @ k.conj().T
    return 0.5 * (y + y.conj().T)


def _physical_start(chi: np.ndarray, mix: float = 1e-3) -> np.ndarray:
    choi = chi_to_choi(0.5 * (chi + chi.conj().T))
    w, u = np.linalg.eigh(choi)
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        return np.eye(4, dtype=complex) / 2
    choi = u @ np.diag(w) @ u.conj().T
    choi = 2 * choi / np.trace(choi).real
    choi = (1 - mix) * choi + mix * np.eye(4) / 2
    return _tp_normalize(choi)


@dataclass(frozen=True)
class MLEFit:
    chi: np.ndarray
    converged: bool
    iterations: int
    log_likelihoods: tuple[float, ...]


def mle_chi(data: TomographyDataset, tol: float = 1e-10, max_iter: int = 5000) -> MLEFit:
    """CPTP maximum-likelihood process matrix.

    Diluted ``R J R`` iterations on the Choi matrix, each followed by the
    congruence that restores trace preservation. A step is only accepted when
    it does not lower the likelihood, halving the dilution otherwise, so the
    likelihood sequence is monotone. Iteration stops when the relative gain
    falls below ``tol`` or no step improves the likelihood.
    """
    n = np.asarray(data.clicks, dtype=float)
    total = n.sum()
    choi = _physical_start(linear_inversion_chi(data))
    ll = _loglik(choi, n)
    history = [ll]
    if total == 0:
        return MLEFit(choi_to_chi(choi), True, 0, tuple(history))
    mask = n > 0
    eps = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = np.einsum("...ab,ba->...", _OPS, choi).real
        ratio = np.where(mask, n / np.where(mask, p, 1.0), 0.0)
        r = 2.0 * np.einsum("ijk,ijkab->ab", ratio, _OPS) / total
        accepted = False
        while eps > 1e-12:
            g = np.eye(4) + eps * r
            trial = _tp_normalize(g @ choi @ g.conj().T)
            ll_new = _loglik(trial, n)
            if ll_new >= ll:
                accepted = True
                break
            eps *= 0.5
        if not accepted:
            converged = True
            break
        gain = (ll_new - ll) / max(abs(ll), 1e-300)
        choi, ll = trial, ll_new
        history.append(ll)
        eps = min(eps * 2.0, 1e6)
        if gain < tol:
            converged = True
            break
    chi = choi_to_chi(choi)
    return MLEFit(0.5 * (chi + chi.conj().T), converged, it, tuple(history))


def process_fidelity(chi: np.ndarray, target: np.ndarray | None = None) -> float:
    """``Tr(chi_target chi)`` against a pure (rank-one) target, identity by default."""
    if target is None:
        target = identity_chi()
    w = np.linalg.eigvalsh(0.5 * (target + target.conj().T))
    if w[-2] > 1e-8 or abs(w.sum() - 1) > 1e-8:
        raise NonPureTargetError("target process must be rank one with unit trace")
    return float(np.real(np.trace(target @ chi)))


def average_fidelity(process_fid: float) -> float:
    """Qubit average gate fidelity ``(2 F_p + 1) / 3``."""
    if not 0.0 <= process_fid <= 1.0:
        raise ValueError("process fidelity must lie in [0, 1]")
    return (2 * process_fid + 1) / 3


CLASSICAL_BOUND = 2.0 / 3.0


def _threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("AFC_MEMSIM_THREADS")
    return max(1, int(env)) if env else 1


def bootstrap_fidelity(
    data: TomographyDataset,
    n_resamples: int = 200,
    seed: int = 0,
    target: np.ndarray | None = None,
    threads: int | None = None,
    tol: float = 1e-10,
    max_iter: int = 5000,
) -> tuple[float, float]:
    """Parametric bootstrap of the MLE process fidelity.

    Resample ``r`` draws ``clicks ~ Binomial(trials, clicks/trials)`` with the
    generator seeded by ``seed + r``; results are independent of threading.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    trials = np.asarray(data.trials)
    freq = np.asarray(data.clicks, dtype=float) / trials
    itrials = np.rint(trials).astype(np.int64)

    def one(r: int) -> float:
        rng = np.random.default_rng(seed + r)
        resample = TomographyDataset(itrials, rng.binomial(itrials, freq))
        return process_fidelity(mle_chi(resample, tol, max_iter).chi, target)

    workers = _threads(threads)
    if workers == 1:
        fids = [one(r) for r in range(n_resamples)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            fids = list(pool.map(one, range(n_resamples)))
    fids = np.array(fids)
    return float(fids.mean()), float(fids.std(ddof=1))


def chi_table(chi: np.ndarray) -> list[tuple[int, int, float, float]]:
    return [(r, c, float(chi[r, c].real), float(chi[r, c].imag)) for r in range(4) for c in range(4)]


def write_chi_csv(chi: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "re", "im"])
        for r, c, re, im in chi_table(chi):
            w.writerow([r, c, repr(re), repr(im)])


def read_chi_csv(path) -> np.ndarray:
    chi = np.zeros((4, 4), dtype=complex)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            chi[int(row["row"]), int(row["col"])] = complex(float(row["re"]), float(row["im"]))
    return chi

