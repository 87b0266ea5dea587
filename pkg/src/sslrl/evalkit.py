"""Score aggregation and representation-quality statistics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn as nn


def iqm(scores: Sequence[float]) -> float:
    """25% trimmed mean; when n/4 is fractional the boundary observations get partial weight."""
    x = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    n = len(x)
    if n == 0:
        raise ValueError("iqm of an empty list")
    g = n / 4
    lo = np.arange(n, dtype=np.float64)
    # observation i covers [i, i+1]; keep its overlap with [g, n - g]
    w = np.clip(np.minimum(lo + 1, n - g) - np.maximum(lo, g), 0.0, 1.0)
    return float(np.dot(w, x) / w.sum())


def table_iqms(table: Mapping[tuple[str, str], Sequence[float]]) -> dict[str, dict[str, float]]:
    """``{(agent, env): scores}`` -> ``{agent: {env: IQM}}``."""
    out: dict[str, dict[str, float]] = {}
    for (agent, env), scores in table.items():
        out.setdefault(agent, {})[env] = iqm(scores)
    return out


def relative_score_from_iqms(iqms: Mapping[str, Mapping[str, float]], ddof: int = 1) -> dict[str, float]:
    """Sum over environments of each agent's z-scored IQM.

    ``ddof=1`` (sample std across agents) is the default; ``ddof=0`` gives the
    population form.
    """
    agents = list(iqms)
    if len(agents) < 2:
        raise ValueError("relative score needs at least two agents")
    envs = list(iqms[agents[0]])
    for a in agents:
        if set(iqms[a]) != set(envs):
            raise ValueError(f"agent {a!r} does not cover every environment")
    scores = dict.fromkeys(agents, 0.0)
    for e in envs:
        col = np.array([iqms[a][e] for a in agents], dtype=np.float64)
        std = col.std(ddof=ddof)
        if std == 0:
            raise ValueError(f"zero spread of IQMs in environment {e!r}")
        z = (col - col.mean()) / std
        for a, v in zip(agents, z):
            scores[a] += float(v)
    return scores


def relative_score(table: Mapping[tuple[str, str], Sequence[float]], ddof: int = 1) -> dict[str, float]:
    return relative_score_from_iqms(table_iqms(table), ddof=ddof)


@dataclass
class ReprDataset:
    phi: np.ndarray
    phi_next: np.ndarray
    values: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.phi_next = np.asarray(self.phi_next, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.states = np.asarray(self.states, dtype=np.float64)
        n = len(self.phi)
        if not (len(self.phi_next) == len(self.values) == len(self.states) == n):
            raise ValueError("dataset rows are not aligned")
        if self.phi.shape != self.phi_next.shape:
            raise ValueError("phi and phi_next shapes differ")

    def __len__(self):
        return len(self.phi)


def dynamic_awareness(data: ReprDataset, rng: np.random.Generator) -> float:
    n = len(data)
    if n < 2:
        raise ValueError("dynamic awareness needs at least two rows")
    j = rng.integers(0, n, size=n)
    random_d = np.linalg.norm(data.phi - data.phi[j], axis=1).sum()
    temporal_d = np.linalg.norm(data.phi - data.phi_next, axis=1).sum()
    if random_d == 0:
        raise ValueError("random-pair distances sum to zero")
    return float((random_d - temporal_d) / random_d)


def _pairwise_l2(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def _normalize_by_max(d: np.ndarray) -> np.ndarray:
    m = d.max()
    return np.zeros_like(d) if m == 0 else d / m


def diversity(data: ReprDataset, eps: float = 1e-2) -> float:
    if len(data) < 2:
        raise ValueError("diversity needs at least two rows")
    d_s = _normalize_by_max(_pairwise_l2(data.phi))
    d_v = _normalize_by_max(np.abs(data.values[:, None] - data.values[None, :]))
    return float(1.0 - np.minimum(d_v / (d_s + eps), 1.0).mean())


def orthogonality(phi: np.ndarray) -> float:
    phi = np.asarray(phi, dtype=np.float64)
    n = len(phi)
    if n < 2:
        raise ValueError("orthogonality needs at least two rows")
    norms = np.linalg.norm(phi, axis=1)
    if (norms == 0).any():
        raise ValueError("zero-norm representation row")
    cos = np.abs(phi @ phi.T) / np.outer(norms, norms)
    iu = np.triu_indices(n, k=1)
    return float(1.0 - 2.0 / (n * (n - 1)) * cos[iu].sum())


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or len(x) < 2:
        raise ValueError("pearson needs two equal-length sequences of length >= 2")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((xc**2).sum()), np.sqrt((yc**2).sum())
    if sx == 0 or sy == 0:
        raise ValueError("pearson is undefined for a constant input")
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


def state_probe(train: ReprDataset, test: ReprDataset, epochs: int = 2000, hidden: int = 1024,
                lr: float = 1e-3, seed: int = 0) -> float:
    """Fit a two-layer MLP from representations to true states; return test MSE."""
    if train.phi.shape[1] != test.phi.shape[1] or train.states.shape[1] != test.states.shape[1]:
        raise ValueError("train and test dimensions differ")
    gen = torch.Generator().manual_seed(seed)
    d_in, d_out = train.phi.shape[1], train.states.shape[1]
    probe = nn.Sequential(nn.Linear(d_in, hidden), nn.ReLU(), nn.Linear(hidden, d_out)).double()
    with torch.no_grad():
        for layer in (probe[0], probe[2]):
            bound = 1 / math.sqrt(layer.in_features)
            layer.weight.uniform_(-bound, bound, generator=gen)
            layer.bias.uniform_(-bound, bound, generator=gen)
    x, y = torch.from_numpy(train.phi), torch.from_numpy(train.states)
    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    for _ in range(epochs):
        opt.zero_grad()
        loss = ((probe(x) - y) ** 2).mean()
        loss.backward()
        opt.step()
    with torch.no_grad():
        pred = probe(torch.from_numpy(test.phi))
        return float(((pred - torch.from_numpy(test.states)) ** 2).mean())


@dataclass
class RepresentationReport:
    update_step: int
    dyn_awareness: float
    diversity: float
    orthogonality: float
    probe_mse: float


REPORT_FIELDS = tuple(f.name for f in fields(RepresentationReport))


def write_reports(path, reports: Sequence[RepresentationReport]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_FIELDS)
        for r in reports:
            writer.writerow([r.update_step] + [repr(float(getattr(r, k))) for k in REPORT_FIELDS[1:]])


def read_reports(path) -> list[RepresentationReport]:
    with open(path, newline="") as fh:
        return [RepresentationReport(int(row["update_step"]), *(float(row[k]) for k in REPORT_FIELDS[1:]))
                for row in csv.DictReader(fh)]


@torch.no_grad()
def representation_dataset(agent, buffer, image_size: int, idx: np.ndarray | None = None,
                           batch: int = 256) -> ReprDataset:
    """Encode stored transitions with the online encoder; values are ``min Q`` at the policy mean."""
    from .augment import center_crop

    idx = buffer.ordered() if idx is None else idx
    phis, nexts, values = [], [], []
    for start in range(0, len(idx), batch):
        sel = idx[start:start + batch]
        phi = agent.encoder(agent.to_tensor(center_crop(buffer.obs[sel], image_size)))
        nxt = agent.encoder(agent.to_tensor(center_crop(buffer.next_obs[sel], image_size)))
        phis.append(phi.double().numpy())
        nexts.append(nxt.double().numpy())
        values.append(agent.state_value(phi).double().numpy())
    return ReprDataset(np.concatenate(phis), np.concatenate(nexts), np.concatenate(values),
                       buffer.states[idx])


def representation_report(update_step: int, data: ReprDataset, probe_train: ReprDataset,
                          probe_test: ReprDataset, seed: int = 0, probe_epochs: int = 2000) -> RepresentationReport:
    rng = np.random.default_rng(seed)
    return RepresentationReport(
        update_step=update_step,
        dyn_awareness=dynamic_awareness(data, rng),
        diversity=diversity(data),
        orthogonality=orthogonality(data.phi),
        probe_mse=state_probe(probe_train, probe_test, epochs=probe_epochs, seed=seed),
    )
