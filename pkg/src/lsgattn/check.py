"""Correctness self-checks: the property grid behind `lsg check`.

Each runner sweeps configurations, compares the blocked computation against
its independent reference (dense oracle, finite differences, or an exact
counter), and reports the worst error seen together with the configuration
that produced it.
"""

from dataclasses import dataclass, field

import numpy as np

from . import attention, oracle
from .config import LsgConfig
from .rng import Rng

GRID_BLOCK_SIZES = (4, 8, 16)
GRID_FACTORS = (2, 4)
GRID_GLOBALS = (0, 1, 4)
GRID_LENGTHS = (1, 3, 5, 16, 33, 64, 65)
QUICK_BLOCK_SIZES = (4, 8)
QUICK_FACTORS = (2,)
QUICK_GLOBALS = (0, 1)
QUICK_LENGTHS = (1, 5, 16, 33)

STRATEGY_CHOICES = ("none", "strided", "block_strided", "pooling", "norm", "lsh")

EQUIV_TOL = {"double": 1e-10, "single": 1e-5}
ROW_SUM_TOL = 1e-6
GRAD_REL_TOL = 1e-4
GRAD_ABS_FLOOR = 1e-8
CAUSAL_TOL = 1e-6


@dataclass
class PropertyReport:
    name: str
    max_err: float
    tolerance: float
    passed: bool
    worst: str = ""
    failures: list = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" worst at {self.worst}" if self.worst else ""
        return f"{self.name}: max_err={self.max_err:.3e} (tol {self.tolerance:.0e}){extra} {status}"


def _describe(cfg: LsgConfig, n: int) -> str:
    return (
        f"strategy={cfg.strategy} n={n} bt={cfg.block_size} f={cfg.sparsity_factor} "
        f"g={cfg.num_global} causal={cfg.causal} precision={cfg.precision}"
    )


def valid_combo(strategy, block_size, factor) -> bool:
    if (strategy == "none") != (factor == 0):
        return False
    if factor and block_size % factor:
        return False
    if strategy == "lsh":
        c = block_size // factor
        if c < 2 or c % 2:
            return False
    return True


def grid_configs(quick=False, strategy=None, precision="double", seed=0, heads=3, head_dim=4):
    """All valid (cfg, n) points of the equivalence grid."""
    bts = QUICK_BLOCK_SIZES if quick else GRID_BLOCK_SIZES
    fs = QUICK_FACTORS if quick else GRID_FACTORS
    gs = QUICK_GLOBALS if quick else GRID_GLOBALS
    ns = QUICK_LENGTHS if quick else GRID_LENGTHS
    strategies = (strategy,) if strategy else STRATEGY_CHOICES
    idx = 0
    for strat in strategies:
        factors = (0,) if strat == "none" else fs
        for bt in bts:
            for f in factors:
                if not valid_combo(strat, bt, f):
                    continue
                for g in gs:
                    for causal in (False, True):
                        if causal and g:
                            continue
                        for n in ns:
                            idx += 1
                            cfg = LsgConfig(
                                block_size=bt, sparsity_factor=f, strategy=strat,
                                num_global=g, heads=heads, head_dim=head_dim,
                                causal=causal, seed=seed + idx, precision=precision,
                            )
                            yield cfg, n


def _random_inputs(cfg: LsgConfig, n: int, tag: int):
    r = Rng(cfg.seed).derive(tag)
    dim = cfg.model_dim
    g = cfg.num_global
    q, k, v = (r.normal((n, dim), cfg.precision) for _ in range(3))
    if g:
        gq, gk, gv = (r.normal((g, dim), cfg.precision) for _ in range(3))
    else:
        gq = gk = gv = None
    return q, k, v, gq, gk, gv


def run_equivalence(quick=False, strategy=None, seed=0, precision="double",
                    check_patterns=None):
    """Blocked forward vs dense oracle, plus row sums and (optionally) exact
    pattern equality and the locality bound."""
    if check_patterns is None:
        check_patterns = precision == "double"
    equiv = PropertyReport(f"oracle-equivalence[{precision}]", 0.0, EQUIV_TOL[precision], True)
    rows = PropertyReport(f"row-stochasticity[{precision}]", 0.0, ROW_SUM_TOL, True)
    pattern = PropertyReport("pattern-equality", 0.0, 0.0, True)
    locality = PropertyReport("locality-bound", 0.0, 0.0, True)

    for cfg, n in grid_configs(quick, strategy, precision, seed):
        q, k, v, gq, gk, gv = _random_inputs(cfg, n, tag=1)
        inst = attention.LsgAttention(cfg)
        got = inst.forward(q, k, v, gq, gk, gv, keep_state=check_patterns)
        aug = oracle.build_augmented(k, v, gk, gv, cfg)
        ref = oracle.oracle_forward(q, gq, aug, cfg)
        err = float(np.abs(got.out - ref.out).max())
        if cfg.num_global:
            err = max(err, float(np.abs(got.global_out - ref.global_out).max()))
        where = _describe(cfg, n)
        if err > equiv.max_err:
            equiv.max_err, equiv.worst = err, where
        if err > equiv.tolerance:
            equiv.passed = False
            equiv.failures.append(f"{where}: err={err:.3e}")

        row_err = float(np.abs(got.weights_checksum - 1).max())
        if row_err > rows.max_err:
            rows.max_err, rows.worst = row_err, where
        if row_err > rows.tolerance:
            rows.passed = False
            rows.failures.append(f"{where}: err={row_err:.3e}")

        if check_patterns:
            got_pairs = attention.scored_pairs(inst)
            ref_pairs = oracle.scored_pairs_oracle(aug)
            mismatch = sum(len(a ^ b) for a, b in zip(got_pairs, ref_pairs))
            if mismatch:
                pattern.max_err = max(pattern.max_err, float(mismatch))
                pattern.passed = False
                pattern.worst = pattern.worst or where
                pattern.failures.append(f"{where}: {mismatch} pattern mismatches")
            span = attention.attended_token_span(cfg.block_size, cfg.sparsity_factor, cfg.causal)
            bt = cfg.block_size
            out_of_window = 0
            for pairs in got_pairs:
                for q_row, p in pairs:
                    if q_row >= n:
                        continue  # global queries reach everything
                    i = q_row // bt
                    lo = (i - 1 - cfg.sparsity_factor) * bt
                    if not (lo <= p < lo + span):
                        out_of_window += 1
            if out_of_window:
                locality.max_err = max(locality.max_err, float(out_of_window))
                locality.passed = False
                locality.worst = locality.worst or where
                locality.failures.append(f"{where}: {out_of_window} positions out of window")

    reports = [equiv, rows]
    if check_patterns:
        reports += [pattern, locality]
    return reports


def gradient_cases(seed=0):
    """The gradient-check matrix: every strategy, with and without globals,
    plus the causal variants, all at n=12, bt=4, heads=2, d_h=4, double."""
    cases = []
    for strat, f in [("none", 0), ("strided", 2), ("block_strided", 2),
                     ("pooling", 2), ("norm", 2), ("lsh", 2)]:
        for g, causal in ((2, False), (0, True)):
            cases.append(
                LsgConfig(block_size=4, sparsity_factor=f, strategy=strat,
                          num_global=g, heads=2, head_dim=4, causal=causal,
                          seed=seed + 91 + len(cases), precision="double")
            )
    return cases


def finite_difference_gradients(cfg: LsgConfig, n=12, step=1e-5):
    """Max relative gradient error (with absolute floor) against central
    finite differences of the scalar loss sum(out * u) + sum(global_out * ug)."""
    q, k, v, gq, gk, gv = _random_inputs(cfg, n, tag=2)
    r = Rng(cfg.seed).derive(3)
    u = r.normal((n, cfg.model_dim))
    ug = r.normal((cfg.num_global, cfg.model_dim)) if cfg.num_global else None
    inst = attention.LsgAttention(cfg)
    inst.forward(q, k, v, gq, gk, gv, keep_state=True)
    grads = inst.backward(u, ug)

    def loss():
        out = inst.forward(q, k, v, gq, gk, gv)
        total = float((out.out * u).sum())
        if ug is not None:
            total += float((out.global_out * ug).sum())
        return total

    worst = 0.0
    pairs = [(q, grads.q), (k, grads.k), (v, grads.v)]
    if cfg.num_global:
        pairs += [(gq, grads.global_q), (gk, grads.global_k), (gv, grads.global_v)]
    for t, analytic in pairs:
        it = np.nditer(t, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = t[idx]
            t[idx] = orig + step
            lp = loss()
            t[idx] = orig - step
            lm = loss()
            t[idx] = orig
            fd = (lp - lm) / (2 * step)
            diff = abs(fd - analytic[idx])
            if diff <= GRAD_ABS_FLOOR:
                continue
            worst = max(worst, diff / max(abs(fd), abs(analytic[idx]), GRAD_ABS_FLOOR))
    return worst


def run_gradient_check(seed=0, quick=False):
    report = PropertyReport("gradient-fd", 0.0, GRAD_REL_TOL, True)
    cases = gradient_cases(seed)
    if quick:
        cases = cases[:4]
    for cfg in cases:
        err = finite_difference_gradients(cfg)
        where = _describe(cfg, 12)
        if err > report.max_err:
            report.max_err, report.worst = err, where
        if err > report.tolerance:
            report.passed = False
            report.failures.append(f"{where}: err={err:.3e}")
    return report


def run_causal_independence(seed=0, quick=False, draws=20):
    """Perturbing token j must not move any output at positions < j."""
    report = PropertyReport("causal-independence", 0.0, CAUSAL_TOL, True)
    if quick:
        draws = 5
    combos = []
    for strat in STRATEGY_CHOICES:
        factors = (0,) if strat == "none" else GRID_FACTORS
        for bt in (QUICK_BLOCK_SIZES if quick else GRID_BLOCK_SIZES):
            for f in factors:
                if valid_combo(strat, bt, f):
                    combos.append((strat, bt, f))
    for ci, (strat, bt, f) in enumerate(combos):
        cfg = LsgConfig(block_size=bt, sparsity_factor=f, strategy=strat,
                        heads=2, head_dim=4, causal=True,
                        seed=seed + 7000 + ci, precision="single")
        r = Rng(cfg.seed).derive(4)
        for _ in range(draws):
            n = 2 + (r.next_word() % 70)
            j = r.next_word() % n
            q, k, v, *_ = _random_inputs(cfg, n, tag=5)
            base = attention.LsgAttention(cfg).forward(q, k, v).out
            q2, k2, v2 = q.copy(), k.copy(), v.copy()
            for t in (q2, k2, v2):
                t[j] += r.normal((cfg.model_dim,), "single")
            pert = attention.LsgAttention(cfg).forward(q2, k2, v2).out
            if j == 0:
                continue
            err = float(np.abs(pert[:j] - base[:j]).max())
            where = f"{_describe(cfg, n)} j={j}"
            if err > report.max_err:
                report.max_err, report.worst = err, where
            if err > report.tolerance:
                report.passed = False
                report.failures.append(f"{where}: err={err:.3e}")
    return report


def run_structural_counts(seed=0):
    """Exact layout counts: assembled row width, attended span, and the
    block-size-2 factor-4 instance (6 local + 4 sparse keys per query)."""
    report = PropertyReport("structural-counts", 0.0, 0.0, True)

    def fail(msg):
        report.passed = False
        report.max_err = max(report.max_err, 1.0)
        report.failures.append(msg)
        if not report.worst:
            report.worst = msg

    for bt in GRID_BLOCK_SIZES:
        for f in (0,) + GRID_FACTORS:
            for g in GRID_GLOBALS:
                strat = "none" if f == 0 else "pooling"
                cfg = LsgConfig(block_size=bt, sparsity_factor=f, strategy=strat,
                                num_global=g, heads=2, head_dim=4,
                                seed=seed + 31, precision="double")
                n = (2 * max(f, 1) + 5) * bt
                q, k, v, gq, gk, gv = _random_inputs(cfg, n, tag=6)
                inst = attention.LsgAttention(cfg)
                inst.forward(q, k, v, gq, gk, gv, keep_state=True)
                width = inst._state.k_aug.shape[2]
                expected = (5 * bt + g) if f else (3 * bt + g)
                if width != expected:
                    fail(f"{_describe(cfg, n)}: row width {width} != {expected}")
                span = attention.attended_token_span(bt, f)
                pairs = attention.scored_pairs(inst)[0]
                i = max(f, 1) + 2  # interior block with full reach
                reach = sorted(p for q_row, p in pairs if q_row // bt == i)
                got_span = reach[-1] - reach[0] + 1
                if got_span != span:
                    fail(f"{_describe(cfg, n)}: span {got_span} != {span}")

    local, sparse = attention.per_query_key_counts(2, 4)
    if (local, sparse) != (6, 4):
        fail(f"block_size=2 factor=4 counts {(local, sparse)} != (6, 4)")
    if attention.attended_token_span(2, 4) != 3 * 2 + 2 * 2 * 4:
        fail("block_size=2 factor=4 span mismatch")
    return report


def run_cost_linearity():
    """The non-global score-entry term must exactly double with n."""
    report = PropertyReport("cost-linearity", 0.0, 0.0, True)
    for bt, f, g in [(128, 2, 1), (128, 0, 0), (16, 4, 4), (8, 2, 0)]:
        strat = "none" if f == 0 else "strided"
        cfg = LsgConfig(block_size=bt, sparsity_factor=f, strategy=strat,
                        num_global=g, heads=4, head_dim=8)
        for n in (bt * 4, bt * 8, 1024 if bt <= 128 else bt * 16):
            lhs = attention.score_entry_count(cfg, 2 * n) - g * (2 * n + g)
            rhs = 2 * (attention.score_entry_count(cfg, n) - g * (n + g))
            if lhs != rhs:
                report.passed = False
                report.max_err = max(report.max_err, float(abs(lhs - rhs)))
                report.failures.append(f"bt={bt} f={f} g={g} n={n}: {lhs} != {rhs}")
    return report


def run_schedule_equality(seed=0):
    """threads=1 and threads=2 must produce bitwise-equal outputs."""
    report = PropertyReport("schedule-equality", 0.0, 0.0, True)
    for strat, f, g, causal in [("pooling", 2, 2, False), ("lsh", 2, 0, False),
                                ("none", 0, 0, True), ("norm", 4, 1, False)]:
        cfg = LsgConfig(block_size=8, sparsity_factor=f, strategy=strat,
                        num_global=g, heads=3, head_dim=4, causal=causal,
                        seed=seed + 17, precision="double")
        n = 37
        q, k, v, gq, gk, gv = _random_inputs(cfg, n, tag=7)
        inst = attention.LsgAttention(cfg)
        a = inst.forward(q, k, v, gq, gk, gv, threads=1)
        b = inst.forward(q, k, v, gq, gk, gv, threads=2)
        same = np.array_equal(a.out, b.out) and np.array_equal(a.global_out, b.global_out)
        if not same:
            report.passed = False
            report.max_err = max(
                report.max_err, float(np.abs(a.out - b.out).max())
            )
            report.failures.append(f"{_describe(cfg, n)}: schedules disagree")
    return report


def run_all(quick=False, strategy=None, seed=0):
    """Everything `lsg check` runs; returns (reports, all_passed)."""
    reports = []
    for precision in ("double", "single"):
        reports.extend(run_equivalence(quick, strategy, seed, precision))
    reports.append(run_gradient_check(seed, quick))
    reports.append(run_causal_independence(seed, quick))
    reports.append(run_structural_counts(seed))
    reports.append(run_cost_linearity())
    reports.append(run_schedule_equality(seed))
    return reports, all(r.passed for r in reports)
