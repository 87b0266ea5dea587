"""One small random instance per registered loss: package implementation vs oracle.

Each case holds float64 numpy inputs, a torch function built from the package's
loss code, the straight-line oracle, and the names of the inputs that receive
gradients (stop-gradient targets are excluded).
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

import oracles as O
from sslrl.ssl import losses as L
from sslrl.ssl.registry import LOSS_NAMES, context_spec


@dataclass
class LossCase:
    name: str
    inputs: dict
    torch_fn: Callable
    oracle_fn: Callable
    diff_keys: tuple

    def torch_value(self, requires_grad=False):
        t = {k: torch.tensor(v, dtype=torch.float64, requires_grad=requires_grad and k in self.diff_keys)
             if isinstance(v, np.ndarray) and v.dtype.kind == "f" else v for k, v in self.inputs.items()}
        return self.torch_fn(t), t

    def oracle_value(self):
        return float(self.oracle_fn(self.inputs))


ROLE_DIMS = {"repr_next": 5, "action": 2, "reward": 1}


def _context_case(name, rng):
    spec, balanced = context_spec(name)
    n, d, hid = 4, 5, 8
    inputs = {
        "repr": rng.normal(size=(n, d)),
        "second": rng.normal(size=(n, ROLE_DIMS[spec.second_input])),
        "W1": rng.normal(size=(d + ROLE_DIMS[spec.second_input], hid)) * 0.5,
        "b1": rng.normal(size=hid) * 0.1,
    }
    for o in spec.outputs:
        inputs["W_" + o] = rng.normal(size=(hid, ROLE_DIMS[o])) * 0.5
        inputs["T_" + o] = rng.normal(size=(n, ROLE_DIMS[o]))

    def torch_fn(t):
        h = torch.relu(torch.cat([t["repr"], t["second"]], -1) @ t["W1"] + t["b1"])
        preds = {o: h @ t["W_" + o] for o in spec.outputs}
        targets = {o: t["T_" + o] for o in spec.outputs}
        return L.context_loss(spec.outputs, preds, targets, balanced=balanced)

    def oracle_fn(x):
        h = []
        for i in range(n):
            row = list(x["repr"][i]) + list(x["second"][i])
            h.append([max(0.0, sum(row[a] * x["W1"][a][j] for a in range(len(row))) + x["b1"][j])
                      for j in range(hid)])
        preds = [[[sum(hi[a] * x["W_" + o][a][j] for a in range(hid)) for j in range(ROLE_DIMS[o])] for hi in h]
                 for o in spec.outputs]
        targets = [x["T_" + o] for o in spec.outputs]
        if balanced:
            return sum(O.mse_pooled([p], [t]) for p, t in zip(preds, targets)) / len(preds)
        return O.mse_pooled(preds, targets)

    diff = ("repr", "second", "W1") + tuple("W_" + o for o in spec.outputs)
    return LossCase(name, inputs, torch_fn, oracle_fn, diff)


def make_cases(seed=0) -> dict[str, LossCase]:
    rng = np.random.default_rng(seed)
    n, k = 4, 5
    cases = {}

    inp = {"q": rng.normal(size=(n, k)), "k": rng.normal(size=(n, k)), "W": rng.normal(size=(k, k)) * 0.5}
    cases["curl"] = LossCase("curl", inp, lambda t: L.info_nce(t["q"], t["k"], W=t["W"]),
                             lambda x: O.info_nce(x["q"], x["k"], W=x["W"]), ("q", "W"))

    for name, extra in (("curl_w_action", 2), ("curl_w_critic", 2)):
        inp = {"q": rng.normal(size=(n, k)), "k": rng.normal(size=(n, k)),
               "eq": rng.normal(size=(n, extra)), "ek": rng.normal(size=(n, extra)),
               "W": rng.normal(size=(k + extra, k + extra)) * 0.5}
        cases[name] = LossCase(
            name, inp, lambda t: L.curl_conditioned(t["q"], t["k"], t["eq"], t["ek"], W=t["W"]),
            lambda x: O.info_nce(np.hstack([x["q"], x["eq"]]), np.hstack([x["k"], x["ek"]]), W=x["W"]),
            ("q", "eq", "W"))

    inp = {key: rng.normal(size=(n, 6)) for key in ("p1", "z2", "p1s", "z2s")}
    cases["byol"] = LossCase("byol", inp, lambda t: L.byol_loss(t["p1"], t["z2"], t["p1s"], t["z2s"]),
                             lambda x: O.byol(x["p1"], x["z2"], x["p1s"], x["z2s"]), ("p1", "p1s"))

    inp = {key: rng.normal(size=(n, 6)) for key in ("h", "hs", "z", "zs")}
    cases["simsiam"] = LossCase("simsiam", inp, lambda t: L.simsiam_loss(t["h"], t["hs"], t["z"], t["zs"]),
                                lambda x: O.simsiam(x["h"], x["hs"], x["z"], x["zs"]), ("h", "hs"))

    inp = {key: rng.normal(size=(n, 6)) for key in ("s1", "s2", "t1", "t2")}
    inp["center"] = rng.normal(size=6) * 0.1
    cases["dino"] = LossCase(
        "dino", inp, lambda t: L.dino_loss(t["s1"], t["s2"], t["t1"], t["t2"], t["center"], 0.1, 0.04, 0.9)[0],
        lambda x: O.dino(x["s1"], x["s2"], x["t1"], x["t2"], x["center"], 0.1, 0.04, 0.9)[0], ("s1", "s2"))

    labels = np.array([0, 1, 2, 3])
    inp = {"img": rng.normal(size=(n, 2, 3, 3)), "Wc": rng.normal(size=(18, 4)) * 0.3, "labels": labels}

    def rot_oracle(x):
        logits = []
        for i in range(n):
            flat = []
            for ch in range(2):
                im = x["img"][i, ch].tolist()
                for _ in range(int(x["labels"][i])):
                    im = O.rot90_ccw(im)
                flat += [v for row in im for v in row]
            logits.append([sum(flat[a] * x["Wc"][a][c] for a in range(18)) for c in range(4)])
        return O.cross_entropy(logits, x["labels"])

    cases["rotation_cls"] = LossCase(
        "rotation_cls", inp,
        lambda t: L.rotation_cls_loss(L.rotate_images(t["img"], t["labels"]).flatten(1) @ t["Wc"], t["labels"]),
        rot_oracle, ("img", "Wc"))

    swap = np.array([True, False, True, False])
    inp = {"x1": rng.normal(size=(n, 3)), "x2": rng.normal(size=(n, 3)), "a": rng.normal(size=(n, 2)),
           "Wc": rng.normal(size=(8, 1)) * 0.5, "swap": swap}

    def shuffle_torch(t):
        y1, y2 = L.shuffle_pairs(t["x1"], t["x2"], t["swap"])
        return L.shuffle_cls_loss(torch.cat([y1, y2, t["a"]], -1) @ t["Wc"], t["swap"].astype(np.float64))

    def shuffle_oracle(x):
        logits = []
        for i in range(n):
            u, v = (x["x2"][i], x["x1"][i]) if x["swap"][i] else (x["x1"][i], x["x2"][i])
            row = list(u) + list(v) + list(x["a"][i])
            logits.append(sum(row[j] * x["Wc"][j][0] for j in range(8)))
        return O.bce_with_logits(logits, x["swap"].astype(float))

    cases["shuffle_cls"] = LossCase("shuffle_cls", inp, shuffle_torch, shuffle_oracle, ("x1", "x2", "Wc"))

    inp = {"recon": rng.normal(size=(2, 3, 5, 5)), "target": rng.normal(size=(2, 3, 6, 6)),
           "z": rng.normal(size=(2, 4)), "P1": rng.normal(size=(3, 3)), "P2": rng.normal(size=4)}
    cases["ae"] = LossCase(
        "ae", inp, lambda t: L.ae_loss(t["recon"], t["target"], t["z"], [t["P1"], t["P2"]], 0.1, 0.05),
        lambda x: O.rae(x["recon"], x["target"][:, :, :5, :5], x["z"], [x["P1"], x["P2"]], 0.1, 0.05),
        ("recon", "z", "P1", "P2"))

    mask = L.sample_patch_mask(2, 8, 4, 0.5, np.random.default_rng(seed))
    inp = {"recon": rng.normal(size=(2, 3, 8, 8)), "target": rng.normal(size=(2, 3, 8, 8)),
           "z": rng.normal(size=(2, 4)), "P1": rng.normal(size=(3, 3)), "mask": mask}
    cases["mae"] = LossCase(
        "mae", inp, lambda t: L.mae_loss(t["recon"], t["target"], t["mask"], t["z"], [t["P1"]], 0.1, 0.05),
        lambda x: O.mae(x["recon"], x["target"], x["mask"], x["z"], [x["P1"]], 0.1, 0.05),
        ("recon", "z", "P1"))

    for name in LOSS_NAMES:
        if name not in cases:
            cases[name] = _context_case(name, rng)
    assert set(cases) == set(LOSS_NAMES)
    return cases


def gradient_rel_error(case: LossCase, h=1e-6) -> float:
    """Relative L2 error between autograd and central finite differences over all diff inputs."""
    value, t = case.torch_value(requires_grad=True)
    value.backward()
    analytic, numeric = [], []
    for key in case.diff_keys:
        analytic.append(t[key].grad.numpy().ravel())
        x = case.inputs[key].copy()

        def f():
            inputs = dict(case.inputs)
            inputs[key] = x
            tt = {kk: torch.tensor(v, dtype=torch.float64) if isinstance(v, np.ndarray) and v.dtype.kind == "f"
                  else v for kk, v in inputs.items()}
            return float(case.torch_fn(tt))

        numeric.append(O.central_diff_grad(f, x, h).ravel())
    a, nmr = np.concatenate(analytic), np.concatenate(numeric)
    return float(np.linalg.norm(a - nmr) / max(np.linalg.norm(nmr), 1e-300))


def oracle_rel_error(case: LossCase) -> float:
    value, _ = case.torch_value()
    ref = case.oracle_value()
    return abs(float(value) - ref) / max(abs(ref), 1e-300)
