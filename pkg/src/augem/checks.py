"""Self-contained property and oracle suites for the ``check`` command.

Each check exercises one contract of the library — normalization of the
probability vectors, the softmin scalar oracle, the subset-weighting
identity, finite-difference gradient agreement, limit-mode routing, the
prior update, checkpoint round-trips, and the dataset loaders — and
returns a ``CheckResult`` instead of raising, so the CLI can report all
outcomes and pick an exit code.
"""

from __future__ import annotations

import os
import struct
import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import data, latentem, nn
from . import policy as pol


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _result(name, ok, detail, started) -> CheckResult:
    return CheckResult(name=name, ok=bool(ok), detail=detail,
                       seconds=time.monotonic() - started)


def check_normalization(trials: int = 10_000, seed: int = 0) -> CheckResult:
    """h, h-tilde and pi all sum to one and stay non-negative under fuzz."""
    started = time.monotonic()
    rng = np.random.default_rng(seed)
    worst = 0.0
    pi_state = pol.init_pi(pol.POLICY_COUNT, window=10)
    for trial in range(trials):
        b = int(rng.integers(1, 5))
        k = int(rng.integers(1, 9))
        log_p = -rng.exponential(3.0, size=(b, k))
        log_pi = np.log(rng.dirichlet(np.ones(k)))
        h = latentem.cond_prob_log(log_pi, log_p)
        sigma = float(np.exp(rng.uniform(-3, 3)))
        h_tilde = latentem.softmin_weights(h, sigma)
        for arr in (h, h_tilde):
            if arr.min() < 0.0:
                return _result("normalization", False,
                               f"negative entry at trial {trial}", started)
            worst = max(worst, float(np.abs(arr.sum(axis=-1) - 1.0).max()))
        if trial % 100 == 0:
            subset = pol.sample_subset(pol.POLICY_COUNT, k, rng)
            pi_state = pol.update_pi(pi_state, h_tilde.mean(axis=0), subset)
            worst = max(worst, abs(float(pi_state.pi.sum()) - 1.0))
            if pi_state.pi.min() < 0.0:
                return _result("normalization", False,
                               f"negative pi at trial {trial}", started)
    ok = worst <= 1e-9
    return _result("normalization", ok,
                   f"{trials} trials, worst |sum-1| = {worst:.3e}", started)


def check_softmin_oracle() -> CheckResult:
    """Hand-computed two-entry softmin value."""
    started = time.monotonic()
    got = latentem.softmin_weights(np.array([0.1, 0.4]), sigma=1.0)
    want = np.array([0.57444, 0.42556])
    err = float(np.abs(got - want).max())
    return _result("softmin_oracle", err <= 1e-5,
                   f"max deviation {err:.2e} from [0.57444, 0.42556]",
                   started)


def check_subset_identity(instances: int = 60, seed: int = 2) -> CheckResult:
    """Constant subset-inclusion weights reproduce the full-set loss."""
    started = time.monotonic()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        s = int(rng.choice([2, 4, 8]))
        pi = rng.dirichlet(np.ones(s))
        p = rng.uniform(0.05, 1.0, size=s)
        full = latentem.expected_loss_full(p, pi)
        for const in (0.1, 0.5, 1.0):
            delta = np.full(s, const)
            got = latentem.expected_loss_delta(p, pi, delta)
            worst = max(worst, abs(got - full))
    return _result("subset_identity", worst <= 1e-12,
                   f"{instances} instances, worst gap {worst:.3e}", started)


def check_gradient_fd(seed: int = 3) -> CheckResult:
    """Finite differences agree with the analytic weighted gradient."""
    started = time.monotonic()
    rng = np.random.default_rng(seed)
    specs = (nn.softmax_spec((3, 3, 1), 3),
             nn.mlp_spec((4, 4, 1), 4, (6,)))
    worst = 0.0
    for spec in specs:
        params = nn.init_params(spec, rng)
        b, k = 2, 3
        views = rng.uniform(0, 1, size=(b, k, *spec.input_shape))
        labels = rng.dirichlet(np.ones(spec.n_classes), size=(b, k))
        weights = rng.dirichlet(np.ones(k), size=b)
        _, grads = nn.weighted_loss_and_grad(params, views, labels, weights)

        def loss_fn(p):
            value, _ = nn.weighted_loss_and_grad(p, views, labels, weights)
            return value

        for li, (gw, gb) in enumerate(grads):
            for gref, which in ((gw, 0), (gb, 1)):
                flat = params.layers[li][which].ravel()
                num = np.empty_like(flat)
                eps = 1e-4
                for j in range(flat.size):
                    old = flat[j]
                    flat[j] = old + eps
                    up = loss_fn(params)
                    flat[j] = old - eps
                    down = loss_fn(params)
                    flat[j] = old
                    num[j] = (up - down) / (2 * eps)
                denom = max(np.linalg.norm(gref.ravel()), 1e-12)
                rel = np.linalg.norm(num - gref.ravel()) / denom
                worst = max(worst, float(rel))
    return _result("gradient_fd", worst <= 1e-6,
                   f"worst relative error {worst:.3e}", started)


def check_limit_routing(seed: int = 4) -> CheckResult:
    """sigma=0 picks the arg-min entry; sigma=inf flattens to uniform."""
    started = time.monotonic()
    rng = np.random.default_rng(seed)
    h = rng.dirichlet(np.ones(6), size=3)
    hard = latentem.resolve_weights(h, latentem.MODE_LATENT, 0.0)
    flat = latentem.resolve_weights(h, latentem.MODE_LATENT, np.inf)
    issues = []
    for row in range(3):
        if hard[row].argmax() != h[row].argmin():
            issues.append(f"row {row}: sigma=0 missed the arg-min")
    if not np.allclose(flat, 1.0 / 6.0, atol=1e-15):
        issues.append("sigma=inf is not uniform")
    tie = latentem.resolve_weights(np.array([[0.2, 0.2, 0.6]]),
                                   latentem.MODE_UBS, 1.0)
    if not np.allclose(tie, [[0.5, 0.5, 0.0]], atol=1e-15):
        issues.append("tied minima not split equally")
    return _result("limit_routing", not issues,
                   "; ".join(issues) or "hard/flat/tie limits as specified",
                   started)


def check_pi_update(seed: int = 5) -> CheckResult:
    """Moving-average prior: window eviction and the probability floor."""
    started = time.monotonic()
    rng = np.random.default_rng(seed)
    state = pol.init_pi(8, window=3)
    subset = pol.SubsetDraw(indices=np.arange(8, dtype=np.int64))
    spike = np.zeros(8)
    spike[2] = 1.0
    for _ in range(4):                      # push the same spike 4 times
        state = pol.update_pi(state, spike, subset)
    issues = []
    if len(state.buffer) != 3:
        issues.append(f"window holds {len(state.buffer)} entries, want 3")
    if not state.pi.argmax() == 2:
        issues.append("mass did not follow the pushed policy")
    if state.pi.min() <= 0.0:
        issues.append("floor failed: zero probability survived")
    mixed = rng.dirichlet(np.ones(8))
    state = pol.update_pi(state, mixed, subset)
    if abs(float(state.pi.sum()) - 1.0) > 1e-9:
        issues.append("pi does not sum to one after mixed update")
    return _result("pi_update", not issues,
                   "; ".join(issues) or
                   "window eviction, floor and normalization hold", started)


def check_checkpoint_roundtrip(seed: int = 6) -> CheckResult:
    """Saved parameters reload bit-for-bit."""
    started = time.monotonic()
    rng = np.random.default_rng(seed)
    spec = nn.mlp_spec((4, 4, 1), 5, (7,))
    params = nn.init_params(spec, rng)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.lann")
        nn.save_checkpoint(params, path)
        loaded = nn.load_checkpoint(path, spec)
    same = all(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
               for a, b in zip(params.layers, loaded.layers))
    return _result("checkpoint_roundtrip", same,
                   "round-trip bit-exact" if same else "arrays differ",
                   started)


def check_loader_golden() -> CheckResult:
    """Tiny hand-built IDX / CIFAR files parse exactly; corruption raises."""
    started = time.monotonic()
    issues = []
    with tempfile.TemporaryDirectory() as tmp:
        img_path = os.path.join(tmp, "img.idx")
        lab_path = os.path.join(tmp, "lab.idx")
        pixels = bytes([0, 128, 255, 64, 32, 16, 8, 4])
        with open(img_path, "wb") as fh:
            fh.write(struct.pack(">IIII", data.MNIST_IMAGE_MAGIC, 2, 2, 2))
            fh.write(pixels)
        with open(lab_path, "wb") as fh:
            fh.write(struct.pack(">II", data.MNIST_LABEL_MAGIC, 2))
            fh.write(bytes([3, 9]))
        ds = data.load_mnist_idx(img_path, lab_path, "train")
        want = np.array(list(pixels), dtype=np.float64).reshape(2, 2, 2, 1)
        if not np.array_equal(ds.images, want / 255.0):
            issues.append("idx pixel mismatch")
        if not np.array_equal(ds.labels, [3, 9]):
            issues.append("idx label mismatch")

        bad_path = os.path.join(tmp, "bad.idx")
        with open(bad_path, "wb") as fh:
            fh.write(struct.pack(">IIII", 0xDEAD, 2, 2, 2))
            fh.write(pixels)
        try:
            data.load_mnist_idx(bad_path, lab_path, "train")
            issues.append("corrupt magic accepted")
        except data.FormatError:
            pass

        cif_path = os.path.join(tmp, "batch.bin")
        record = bytes([7]) + bytes(range(12)) * 256
        with open(cif_path, "wb") as fh:
            fh.write(record[:data.CIFAR_RECORD_LEN])
        ds = data.load_cifar10_bin(cif_path, "train")
        if ds.images.shape != (1, 32, 32, 3) or ds.labels[0] != 7:
            issues.append("cifar record mismatch")
        with open(cif_path, "ab") as fh:
            fh.write(b"\x00" * 10)          # no longer a whole record
        try:
            data.load_cifar10_bin(cif_path, "train")
            issues.append("truncated cifar accepted")
        except data.LengthError:
            pass
    return _result("loader_golden", not issues,
                   "; ".join(issues) or "golden bytes and error paths hold",
                   started)


ALL_CHECKS = (
    check_normalization,
    check_softmin_oracle,
    check_subset_identity,
    check_gradient_fd,
    check_limit_routing,
    check_pi_update,
    check_checkpoint_roundtrip,
    check_loader_golden,
)


def run_checks(only: str | None = None) -> list:
    """Run every suite (or those whose name contains ``only``)."""
    results = []
    for fn in ALL_CHECKS:
        name = fn.__name__.removeprefix("check_")
        if only and only not in name:
            continue
        try:
            results.append(fn())
        except Exception as exc:            # a crash is a failed check
            results.append(CheckResult(name=name, ok=False,
                                       detail=f"raised {exc!r}",
                                       seconds=0.0))
    return results
