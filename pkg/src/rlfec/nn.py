"""Dense dueling Q-network with hand-written backprop and Adam (numpy, float64)."""

from __future__ import annotations

import numpy as np

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wv", "bv", "Wa", "ba")


class DuelingNetwork:
    """3 -> 256 ReLU -> 256 ReLU -> (V: 1, A: 6) -> Q = V + A - mean(A).

    Output heads are linear.
    """

    def __init__(self, rng: np.random.Generator | None = None, n_in: int = 3, hidden: int = 256,
                 n_actions: int = 6):
        self.n_in, self.hidden, self.n_actions = n_in, hidden, n_actions
        shapes = self.shapes()
        self.params = {k: np.zeros(s) for k, s in shapes.items()}
        if rng is not None:
            fan_in = {"W1": n_in, "b1": n_in, "W2": hidden, "b2": hidden,
                      "Wv": hidden, "bv": hidden, "Wa": hidden, "ba": hidden}
            for k in PARAM_NAMES:
                bound = 1.0 / np.sqrt(fan_in[k])
                self.params[k] = rng.uniform(-bound, bound, size=shapes[k])
        self._cache = None

    def shapes(self) -> dict[str, tuple[int, ...]]:
        h, a = self.hidden, self.n_actions
        return {"W1": (self.n_in, h), "b1": (h,), "W2": (h, h), "b2": (h,),
                "Wv": (h, 1), "bv": (1,), "Wa": (h, a), "ba": (a,)}

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Q-values for a state (shape (3,)) or a batch (shape (B, 3))."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite network input")
        single = x.ndim == 1
        X = x[None, :] if single else x
        p = self.params
        z1 = X @ p["W1"] + p["b1"]
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ p["W2"] + p["b2"]
        h2 = np.maximum(z2, 0.0)
        V = h2 @ p["Wv"] + p["bv"]
        A = h2 @ p["Wa"] + p["ba"]
        Q = V + A - A.mean(axis=1, keepdims=True)
        self._cache = (X, z1, h1, z2, h2)
        return Q[0] if single else Q

    def preactivations(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        self.forward(x)
        _, z1, _, z2, _ = self._cache
        return z1, z2

    def loss_and_grads(self, states, actions, targets) -> tuple[float, dict[str, np.ndarray]]:
        """Mean over the batch of (target - Q(s, a))^2 and its gradient."""
        S = np.atleast_2d(np.asarray(states, dtype=float))
        a = np.atleast_1d(np.asarray(actions, dtype=int))
        y = np.atleast_1d(np.asarray(targets, dtype=float))
        B = S.shape[0]
        Q = self.forward(S)
        X, z1, h1, z2, h2 = self._cache
        rows = np.arange(B)
        err = Q[rows, a] - y
        loss = float(np.mean(err ** 2))
        gQ = np.zeros_like(Q)
        gQ[rows, a] = 2.0 * err / B
        gV = gQ.sum(axis=1, keepdims=True)
        gA = gQ - gQ.mean(axis=1, keepdims=True)
        p = self.params
        g = {}
        g["Wv"] = h2.T @ gV
        g["bv"] = gV.sum(axis=0)
        g["Wa"] = h2.T @ gA
        g["ba"] = gA.sum(axis=0)
        gh2 = gV @ p["Wv"].T + gA @ p["Wa"].T
        gz2 = gh2 * (z2 > 0)
        g["W2"] = h1.T @ gz2
        g["b2"] = gz2.sum(axis=0)
        gh1 = gz2 @ p["W2"].T
        gz1 = gh1 * (z1 > 0)
        g["W1"] = X.T @ gz1
        g["b1"] = gz1.sum(axis=0)
        return loss, g

    def backward(self, state, action_index: int, target: float) -> dict[str, np.ndarray]:
        return self.loss_and_grads(np.asarray(state)[None, :], [action_index], [target])[1]

    def copy(self) -> "DuelingNetwork":
        net = DuelingNetwork(None, self.n_in, self.hidden, self.n_actions)
        net.params = {k: v.copy() for k, v in self.params.items()}
        return net


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            if g.shape != params[k].shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k}")
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def finite_diff_check(net: DuelingNetwork, state, action: int, target: float, h: float = 1e-5,
                      n_samples: int = 200, rng: np.random.Generator | None = None,
                      return_abs: bool = False):
    """Largest relative error between analytic and central-difference gradients.

    Parameters are sampled uniformly across all tensors. A sample is skipped
    when the +/-h perturbation flips any ReLU, since the loss is not
    differentiable there.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError("h must lie in [1e-6, 1e-4]")
    rng = np.random.default_rng(0) if rng is None else rng
    state = np.asarray(state, dtype=float)
    grads = net.backward(state, action, target)
    names = list(PARAM_NAMES)
    sizes = np.array([net.params[k].size for k in names])
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    z1_0, z2_0 = net.preactivations(state)
    pattern = (z1_0 > 0, z2_0 > 0)

    def loss_at() -> tuple[float, bool]:
        z1, z2 = net.preactivations(state)
        same = np.array_equal(z1 > 0, pattern[0]) and np.array_equal(z2 > 0, pattern[1])
        q = net.forward(state)
        return float((target - q[action]) ** 2), same

    worst_rel, worst_abs, checked = 0.0, 0.0, 0
    tries = 0
    while checked < n_samples and tries < 20 * n_samples:
        tries += 1
        flat = int(rng.integers(offsets[-1]))
        t = int(np.searchsorted(offsets, flat, side="right") - 1)
        k = names[t]
        idx = np.unravel_index(flat - offsets[t], net.params[k].shape)
        old = net.params[k][idx]
        net.params[k][idx] = old + h
        lp, ok_p = loss_at()
        net.params[k][idx] = old - h
        lm, ok_m = loss_at()
        net.params[k][idx] = old
        if not (ok_p and ok_m):
            continue
        num = (lp - lm) / (2 * h)
        ana = float(grads[k][idx])
        diff = abs(ana - num)
        worst_abs = max(worst_abs, diff)
        worst_rel = max(worst_rel, diff / max(abs(ana), abs(num), 1e-7))
        checked += 1
    if checked < n_samples:
        raise RuntimeError(f"only {checked} differentiable parameters sampled")
    return (worst_rel, worst_abs) if return_abs else worst_rel
