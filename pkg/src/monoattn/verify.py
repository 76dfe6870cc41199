"""Oracle suites: lattice vs. path enumeration, efficient vs. nested context,
chunk-sync conservation, finite-difference gradients, streaming consistency.

Each suite returns a :class:`SuiteResult`; ``run_all`` runs every suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .lattice import (
    brute_force_posterior,
    brute_force_total_prob,
    posterior_alignment,
    random_lattice,
    total_log_prob,
)
from .monotonic import (
    chunk_final_index,
    chunk_sync_probs,
    expected_context_efficient,
    expected_context_nested,
    monotonic_weights,
)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checks: int
    worst: float
    tolerance: float
    seconds: float
    failures: list[str] = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.checks} checks, worst {self.worst:.3e} "
                f"(tol {self.tolerance:g}), {self.seconds:.1f}s")


def _random_rows(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    """Random distributions along the last axis, some of them sparse."""
    p = rng.gamma(0.5, size=shape)
    p *= rng.random(shape) < 0.7
    flat = p.reshape(-1, shape[-1])
    empty = flat.sum(axis=1) == 0
    flat[empty, rng.integers(0, shape[-1], size=empty.sum())] = 1.0
    return p / p.sum(axis=-1, keepdims=True)


# -- lattice -------------------------------------------------------------------


def lattice_suite(n: int = 500, seed: int = 0, max_T: int = 6, max_U: int = 5) -> SuiteResult:
    """Forward-backward against brute-force path enumeration."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_total = worst_post = worst_rows = 0.0
    fails = []
    for i in range(n):
        T = int(rng.integers(1, max_T + 1))
        U = int(rng.integers(0, max_U + 1))
        lat = random_lattice(rng, T, U, V=int(rng.integers(2, 6)), scale=float(rng.uniform(0.5, 4.0)))
        ref = brute_force_total_prob(lat)
        got = np.exp(total_log_prob(lat))
        rel = abs(got - ref) / ref
        post = posterior_alignment(lat).probs
        d_post = float(np.abs(post - brute_force_posterior(lat).probs).max())
        d_rows = float(np.abs(post.sum(axis=1) - 1.0).max())
        worst_total, worst_post, worst_rows = max(worst_total, rel), max(worst_post, d_post), max(worst_rows, d_rows)
        if rel > 1e-12 or d_post > 1e-10 or d_rows > 1e-6:
            fails.append(f"lattice {i} (T={T}, U={U}): rel {rel:.2e}, post {d_post:.2e}, rows {d_rows:.2e}")
    res = SuiteResult("lattice", not fails, n, max(worst_total, worst_post), 1e-12,
                      time.perf_counter() - t0, fails)
    return res


# -- attention -----------------------------------------------------------------


def attention_suite(n: int = 200, seed: int = 0, heads: int = 4, max_T: int = 32, max_U: int = 16,
                    tol: float = 1e-10) -> SuiteResult:
    """Cumulative-sum expected context against the explicit double sum."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    fails = []
    for i in range(n):
        T = int(rng.integers(1, max_T + 1))
        U = int(rng.integers(0, max_U + 1))
        dk = int(rng.integers(1, 9))
        energies = rng.normal(scale=float(rng.uniform(0.1, 8.0)), size=(heads, U + 1, T))
        align = _random_rows(rng, (heads, U + 1, T))
        H = rng.normal(size=(heads, T, dk))
        ref = expected_context_nested(energies, align, H)
        got = expected_context_efficient(Tensor(energies), align, Tensor(H)).data
        err = float(np.abs(got - ref).max())
        worst = max(worst, err)
        if err > tol:
            fails.append(f"instance {i} (T={T}, U={U}): {err:.2e}")
    return SuiteResult("attention", not fails, n, worst, tol, time.perf_counter() - t0, fails)


# -- chunk sync ----------------------------------------------------------------


def chunk_sync_suite(chunks=(1, 2, 3, 5), max_T: int = 17, seed: int = 0, tol: float = 1e-12) -> SuiteResult:
    """Row sums preserved; only chunk-final steps carry mass."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    checks = 0
    fails = []
    for C in chunks:
        for T in range(1, max_T + 1):
            probs = _random_rows(rng, (int(rng.integers(1, 6)), T))
            synced = chunk_sync_probs(probs, C)
            err = float(np.abs(synced.sum(axis=1) - probs.sum(axis=1)).max())
            finals = np.unique(chunk_final_index(T, C))
            off = np.setdiff1d(np.arange(T), finals)
            leak = float(np.abs(synced[:, off]).max()) if off.size else 0.0
            worst = max(worst, err)
            checks += 1
            if err > tol or leak != 0.0:
                fails.append(f"C={C}, T={T}: sum err {err:.2e}, off-chunk mass {leak:.2e}")
    return SuiteResult("chunk_sync", not fails, checks, worst, tol, time.perf_counter() - t0, fails)


# -- finite differences --------------------------------------------------------


def finite_difference_check(fn: Callable[[list[Tensor]], Tensor], inputs: list[np.ndarray],
                            h: float = 1e-4, rtol: float = 1e-4, floor: float = 1e-6
                            ) -> tuple[float, int, list[str]]:
    """Compare reverse-mode gradients of ``fn`` with central differences.

    Entries whose analytic gradient is at most ``floor`` in magnitude are
    skipped. Returns (worst relative error, entries compared, failures).
    """
    tensors = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    loss = fn(tensors)
    ag.backward(loss)
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    worst, count, fails = 0.0, 0, []
    with ag.no_grad():
        for k, x in enumerate(inputs):
            for idx in np.ndindex(x.shape):
                a = grads[k][idx]
                if abs(a) <= floor:
                    continue
                vals = []
                for sign in (1.0, -1.0):
                    pert = [Tensor(v.copy()) for v in inputs]
                    pert[k].data[idx] += sign * h
                    vals.append(fn(pert).item())
                num = (vals[0] - vals[1]) / (2 * h)
                rel = abs(a - num) / max(abs(a), abs(num))
                worst = max(worst, rel)
                count += 1
                if rel > rtol:
                    fails.append(f"input {k}{list(idx)}: analytic {a:.6e}, numeric {num:.6e}")
    return worst, count, fails


def _weighted(out: Tensor, rng: np.random.Generator) -> Tensor:
    return (out * Tensor(rng.normal(size=out.shape))).sum()


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    """One random instance per differentiable primitive, each reduced to a scalar."""
    from .nn import scaled_dot_attention
    from .training import transducer_nll

    def r(*shape, low=None):
        x = rng.normal(size=shape)
        return np.abs(x) + low if low is not None else x

    def away_from(x, points, gap=0.05):
        # keep kinked primitives off their kinks so differences are smooth
        for p in points:
            x = np.where(np.abs(x - p) < gap, p + gap * np.sign(x - p + 1e-12) * 2, x)
        return x

    W = {name: rng.normal(size=shape) for name, shape in
         [("2x3", (2, 3)), ("3x4", (3, 4)), ("4", (4,)), ("2x3x4", (2, 3, 4))]}
    lat_T, lat_U, lat_V = 3, 2, 4
    targets = rng.integers(0, lat_V, size=(2, lat_U))
    mask = rng.random((2, 3)) < 0.6
    ids = rng.integers(0, 5, size=(2, 3))
    align = _random_rows(rng, (2, 3, 5))
    att_mask = np.tril(np.ones((3, 3), dtype=bool))

    w = lambda out: _weighted(out, np.random.default_rng(1))  # noqa: E731
    return {
        "add": (lambda t: w(t[0] + t[1]), [r(2, 3), r(3)]),
        "sub": (lambda t: w(t[0] - t[1]), [r(2, 3), r(2, 1)]),
        "mul": (lambda t: w(t[0] * t[1]), [r(2, 3), r(1, 3)]),
        "div": (lambda t: w(t[0] / t[1]), [r(2, 3), r(2, 3, low=0.5)]),
        "neg": (lambda t: w(-t[0]), [r(2, 3)]),
        "exp": (lambda t: w(ag.exp(t[0])), [r(2, 3)]),
        "log": (lambda t: w(ag.log(t[0])), [r(2, 3, low=0.3)]),
        "tanh": (lambda t: w(ag.tanh(t[0])), [r(2, 3)]),
        "relu": (lambda t: w(ag.relu(t[0])), [away_from(r(2, 3), [0.0])]),
        "gelu": (lambda t: w(ag.gelu(t[0])), [r(2, 3)]),
        "maximum": (lambda t: w(ag.maximum(t[0], 0.2)), [away_from(r(2, 3), [0.2])]),
        "where": (lambda t: w(ag.where(mask, t[0], -3.0)), [r(2, 3)]),
        "sum": (lambda t: w(t[0].sum(axis=1, keepdims=True)), [r(2, 3)]),
        "mean": (lambda t: w(t[0].mean(axis=0)), [r(2, 3)]),
        "reshape": (lambda t: w(t[0].reshape(3, 2)), [r(2, 3)]),
        "transpose": (lambda t: w(t[0].transpose(2, 0, 1)), [W["2x3x4"].copy()]),
        "getitem_basic": (lambda t: w(t[0][:, 1:3]), [r(2, 4)]),
        "getitem_advanced": (lambda t: w(t[0][np.array([0, 1, 1]), np.array([2, 0, 2])]), [r(2, 3)]),
        "concat": (lambda t: w(ag.concat([t[0], t[1]], axis=1)), [r(2, 3), r(2, 2)]),
        "stack": (lambda t: w(ag.stack([t[0], t[1]], axis=0)), [r(2, 3), r(2, 3)]),
        "cumsum": (lambda t: w(ag.cumsum(t[0], axis=-1)), [r(2, 4)]),
        "reverse_cumsum": (lambda t: w(ag.reverse_cumsum(t[0], axis=-1)), [r(2, 4)]),
        "matmul_2d": (lambda t: w(t[0] @ t[1]), [W["2x3"].copy(), W["3x4"].copy()]),
        "matmul_batched": (lambda t: w(t[0] @ t[1]), [r(2, 2, 3), r(2, 3, 4)]),
        "matmul_weight": (lambda t: w(t[0] @ t[1]), [r(2, 2, 3), r(3, 4)]),
        "matmul_vector": (lambda t: w(t[0] @ t[1]), [r(3, 4), W["4"].copy()]),
        "softmax": (lambda t: w(ag.softmax(t[0], axis=-1)), [r(2, 4)]),
        "log_softmax": (lambda t: w(ag.log_softmax(t[0], axis=-1)), [r(2, 4)]),
        "logsumexp": (lambda t: w(ag.logsumexp(t[0], axis=-1)), [r(2, 4)]),
        "layer_norm": (lambda t: w(ag.layer_norm(t[0], t[1], t[2])), [r(2, 4), r(4), r(4)]),
        "embedding": (lambda t: w(ag.embedding(t[0], ids)), [r(5, 3)]),
        "attention": (lambda t: w(scaled_dot_attention(t[0], t[1], t[2], att_mask)),
                      [r(1, 2, 3, 2), r(1, 2, 3, 2), r(1, 2, 3, 2)]),
        "monotonic_weights": (lambda t: w(monotonic_weights(t[0], align)), [r(2, 3, 5)]),
        "expected_context": (lambda t: w(expected_context_efficient(t[0], align, t[1])),
                             [r(2, 3, 5), r(2, 5, 2)]),
        "transducer_nll": (lambda t: w(transducer_nll(ag.log_softmax(t[0], axis=-1), targets)),
                           [r(2, lat_T, lat_U + 1, lat_V + 1)]),
    }


def tiny_model_config(**overrides):
    from .model import ModelConfig

    base = dict(src_vocab=4, vocab_size=4, d_model=8, heads=2, d_ff=16, encoder_layers=1,
                predictor_layers=1, chunk_frames=2, decision_step=1, max_len=16, seed=3)
    base.update(overrides)
    return ModelConfig(**base)


def algorithm_gradient_check(seed: int = 0, h: float = 1e-4, rtol: float = 1e-4,
                             floor: float = 1e-6) -> tuple[float, int, list[str], dict]:
    """Full two-pass posterior loss on a 3-token sample vs. central differences.

    The posterior alignment is a stop-gradient quantity, so the differences
    are taken with it held at the value the training step computed. Also
    instruments the gradient-free pass: it must record no graph nodes, and
    dropping it in favour of the precomputed alignment must leave every
    gradient bit-identical.
    """
    from .model import MonoAttnTransducer
    from .training import TrainConfig, Trainer, transducer_nll

    rng = np.random.default_rng(seed)
    model = MonoAttnTransducer(tiny_model_config(seed=seed))
    C = model.config.chunk_frames
    trainer = Trainer(model, TrainConfig(mode="posterior", chunk_frames=C))
    src = rng.integers(0, model.config.src_vocab, size=(1, 5))
    tgt = rng.integers(0, model.config.vocab_size, size=(1, 3))

    before = ag.recorded_node_count()
    align = trainer.infer_posterior(src, tgt)
    prior_nodes = ag.recorded_node_count() - before
    untouched = all(p.grad is None for p in model.store)

    def fixed_loss() -> Tensor:
        enc = model.encode(src, C)
        return transducer_nll(model.join(enc.pooled, model.predict(tgt, enc.states, align)), tgt).mean()

    model.store.zero_grad()
    ag.backward(trainer.posterior_loss(src, tgt))
    grads = {n: p.grad.copy() for n, p in model.store.params.items()}
    model.store.zero_grad()
    ag.backward(fixed_loss())
    same = all(np.array_equal(grads[n], p.grad) for n, p in model.store.params.items())
    model.store.zero_grad()

    worst, count, fails = 0.0, 0, []
    with ag.no_grad():
        for name, p in model.store.params.items():
            for idx in np.ndindex(p.data.shape):
                a = grads[name][idx]
                if abs(a) <= floor:
                    continue
                orig = p.data[idx]
                p.data[idx] = orig + h
                up = fixed_loss().item()
                p.data[idx] = orig - h
                down = fixed_loss().item()
                p.data[idx] = orig
                num = (up - down) / (2 * h)
                rel = abs(a - num) / max(abs(a), abs(num))
                worst = max(worst, rel)
                count += 1
                if rel > rtol:
                    fails.append(f"{name}{list(idx)}: analytic {a:.6e}, numeric {num:.6e}")
    info = {"prior_pass_nodes": prior_nodes, "grads_untouched_by_prior_pass": untouched,
            "grads_identical_without_prior_pass": same}
    return worst, count, fails, info


def gradient_suite(seed: int = 0, h: float = 1e-4, rtol: float = 1e-4) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst, checks, fails = 0.0, 0, []
    for name, (fn, inputs) in primitive_cases(rng).items():
        w, n, f = finite_difference_check(fn, inputs, h=h, rtol=rtol)
        worst, checks = max(worst, w), checks + n
        fails += [f"{name}: {msg}" for msg in f]
        if n == 0:
            fails.append(f"{name}: no gradient entries compared")
    w, n, f, info = algorithm_gradient_check(seed, h=h, rtol=rtol)
    worst, checks = max(worst, w), checks + n
    fails += [f"two-pass loss: {msg}" for msg in f]
    if info["prior_pass_nodes"] != 0:
        fails.append(f"gradient-free pass recorded {info['prior_pass_nodes']} graph nodes")
    if not info["grads_untouched_by_prior_pass"]:
        fails.append("gradient-free pass touched parameter gradients")
    if not info["grads_identical_without_prior_pass"]:
        fails.append("gradients depend on the gradient-free pass")
    return SuiteResult("gradients", not fails, checks, worst, rtol, time.perf_counter() - t0, fails)


# -- streaming -----------------------------------------------------------------


def streaming_suite(n: int = 20, seed: int = 0, tol: float = 1e-10) -> SuiteResult:
    """C >= T streaming equals offline decoding; decode states equal the
    teacher-forced pass under the trace's one-hot alignment."""
    from .decoding import DecodePolicyConfig, offline_decode, replay_trace, stream_decode
    from .model import MonoAttnTransducer

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst, checks, fails = 0.0, 0, []
    configs = [dict(chunk_frames=4, decision_step=1, lookahead_chunks=0),
               dict(chunk_frames=4, decision_step=2, lookahead_chunks=1),
               dict(chunk_frames=3, decision_step=3, lookahead_chunks=0)]
    for ci, over in enumerate(configs):
        model = MonoAttnTransducer(tiny_model_config(d_model=16, heads=4, d_ff=32, encoder_layers=2,
                                                     predictor_layers=2, seed=seed + ci, **over))
        # make emissions frequent so traces are non-trivial
        model.join_out.b.data[-1] -= 2.0
        for i in range(n):
            src = rng.integers(0, model.config.src_vocab, size=int(rng.integers(1, 12)))
            off = offline_decode(src, model)
            full = stream_decode(src, model, DecodePolicyConfig(chunk_frames=len(src)))
            checks += 1
            if off.tokens != full.tokens or off.trace.g != full.trace.g:
                fails.append(f"config {ci} sample {i}: C>=T differs from offline")
            res = stream_decode(src, model, DecodePolicyConfig(chunk_frames=over["chunk_frames"]))
            res.trace.validate(len(src))
            replay = replay_trace(model, src, res.trace, over["chunk_frames"])
            err = float(np.abs(replay - res.states).max())
            worst = max(worst, err)
            checks += 1
            if err > tol:
                fails.append(f"config {ci} sample {i}: replay error {err:.2e}")
    return SuiteResult("streaming", not fails, checks, worst, tol, time.perf_counter() - t0, fails)


SUITES = {
    "lattice": lattice_suite,
    "attention": attention_suite,
    "chunk_sync": chunk_sync_suite,
    "gradients": gradient_suite,
    "streaming": streaming_suite,
}


def run_all(names=None) -> list[SuiteResult]:
    return [SUITES[n]() for n in (names or SUITES)]
