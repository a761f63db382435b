"""Declarative experiment runner: config ingestion, sweeps, reports, plots.

Each experiment reproduces one testable claim at desk scale and emits CSV
records, a JSON report with explicit pass/fail thresholds, and a gnuplot
script referencing the CSVs.  Identical (config, seed) pairs produce
byte-identical CSV bodies.
"""

from __future__ import annotations

import configparser
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import soliton
from .grid import RadialField, RadialGrid, h1_seminorm, inner_product, l2_norm, laplacian
from .modulation import (
    ManifoldQuery,
    evolve_nonlinear,
    extract_modulation,
    h_fixed_point,
    make_query,
    picard_map,
    shoot_h,
    trajectory_modulation,
    x_norm,
)
from .norms import energy, lorentz_norm, mixed_norm
from .propagators import (
    SpaceTimeField,
    evolve_linear_perturbed,
    free_sine,
    free_sine_traj,
    free_cosine_traj,
    secular_decomposition_C,
    secular_decomposition_S,
)
from .spectral import ground_state, resonance_pairing, spectrum_report
from .grid import pair_w

EXPERIMENTS = (
    "spectrum",
    "stationarity",
    "energy_conservation",
    "strichartz_free",
    "strichartz_perturbed",
    "secular",
    "pairing_identity",
    "h_scaling",
    "codim1",
    "lipschitz",
    "contraction",
    "adot_l1",
    "weighted_growth",
)

_SECTIONS = {
    "experiment": {"name", "seed", "workers"},
    "grid": {"R", "n", "R_obs"},
    "time": {"T", "dt", "cfl"},
    "data": {"family", "center", "width", "eps"},
    "sweep": {"values"},
    "output": {"dir"},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    workers: int = 1
    R: float = 60.0
    n: int = 1201
    R_obs: float = None
    T: float = 18.0
    dt: float = None
    cfl: float = 0.8
    family: str = "pc_bump"
    center: float = 2.0
    width: float = 1.0
    eps: float = 1e-3
    sweep: tuple = ()
    output_dir: str = "out"

    def grid(self):
        return RadialGrid(R=self.R, n=self.n, R_obs=self.R_obs)

    def timestep(self, grid):
        return self.dt if self.dt is not None else self.cfl * grid.dr

    @staticmethod
    def from_file(path):
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keys are case sensitive (R vs r)
        with open(path) as fh:
            parser.read_file(fh)
        kw = {}
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key in parser[section]:
                if key not in _SECTIONS[section]:
                    raise ConfigError(f"unknown key {section}.{key}")
        get = parser.get
        if parser.has_option("experiment", "name"):
            kw["experiment"] = get("experiment", "name")
        else:
            raise ConfigError("missing experiment.name")
        if parser.has_option("experiment", "seed"):
            kw["seed"] = parser.getint("experiment", "seed")
        if parser.has_option("experiment", "workers"):
            kw["workers"] = parser.getint("experiment", "workers")
        for key, attr, conv in (
            ("R", "R", float),
            ("n", "n", int),
            ("R_obs", "R_obs", float),
        ):
            if parser.has_option("grid", key):
                kw[attr] = conv(get("grid", key))
        for key, attr in (("T", "T"), ("dt", "dt"), ("cfl", "cfl")):
            if parser.has_option("time", key):
                kw[attr] = float(get("time", key))
        for key, attr, conv in (
            ("family", "family", str),
            ("center", "center", float),
            ("width", "width", float),
            ("eps", "eps", float),
        ):
            if parser.has_option("data", key):
                kw[attr] = conv(get("data", key))
        if parser.has_option("sweep", "values"):
            kw["sweep"] = tuple(
                float(v) for v in get("sweep", "values").replace(",", " ").split()
            )
        if parser.has_option("output", "dir"):
            kw["output_dir"] = get("output", "dir")
        return ExperimentConfig(**kw)


def validate(config):
    """Static checks; a nonempty list of violations means the config won't run."""
    issues = []
    if config.experiment not in EXPERIMENTS:
        issues.append(f"experiment.name: unknown experiment {config.experiment!r}")
    try:
        grid = config.grid()
    except ValueError as exc:
        issues.append(f"grid: {exc}")
        return issues
    dt = config.timestep(grid)
    if dt > grid.dr + 1e-12:
        issues.append(f"time.dt: CFL violation dt={dt} > dr={grid.dr}")
    if config.T > grid.budget_horizon() + 1e-12 and config.experiment not in (
        "spectrum",
        "stationarity",
        "energy_conservation",
    ):
        issues.append(
            f"time.T: causality budget violated, T={config.T} > R - R_obs = {grid.budget_horizon()}"
        )
    if config.experiment in ("h_scaling", "lipschitz", "contraction") and not config.sweep:
        issues.append("sweep.values: sweep must be nonempty")
    return issues


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    op: str  # "<" or ">"
    passed: bool


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    records: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def add_check(self, name, value, threshold, op="<"):
        ok = value < threshold if op == "<" else value > threshold
        self.checks.append(Check(name, float(value), float(threshold), op, bool(ok)))
        return ok

    def to_json(self):
        return json.dumps(
            {
                "experiment": self.experiment,
                "config": self.config,
                "records": self.records,
                "fits": self.fits,
                "checks": [asdict(c) for c in self.checks],
                "passed": self.passed,
            },
            indent=2,
            sort_keys=True,
        )


def _write(outdir, name, text):
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _csv(rows, header):
    lines = [header]
    for row in rows:
        lines.append(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def _loglog_fit(x, y):
    """Least-squares slope of log y vs log x with its standard error."""
    lx, ly = np.log(np.asarray(x)), np.log(np.abs(np.asarray(y)))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    n = len(lx)
    if n > 2 and np.size(res):
        sigma2 = float(res[0]) / (n - 2)
        cov = sigma2 * np.linalg.inv(A.T @ A)
        stderr = float(np.sqrt(cov[0, 0]))
    else:
        stderr = 0.0
    return float(coef[0]), float(coef[1]), stderr


def _gnuplot(outdir, name, csvfile, xlabel, ylabel, logscale=False):
    lines = [
        f"# gnuplot script for {name}",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        "set datafile separator ','",
        "set key top left",
    ]
    if logscale:
        lines.append("set logscale xy")
    lines.append(f"plot '{csvfile}' using 1:2 skip 1 with linespoints title '{name}'")
    _write(outdir, f"{name}.gp", "\n".join(lines) + "\n")


# ----------------------------------------------------------------------------
# data families


def bump_field(grid, center, width):
    return grid.field(np.exp(-((grid.r - center) ** 2) / width**2))


def family_field(grid, family, center=2.0, width=1.0, S=None):
    r = grid.r
    if family == "ball":
        return grid.field((r <= 1.0).astype(float))
    if family == "bump":
        return bump_field(grid, center, width)
    if family == "phi5":
        return grid.field(soliton.phi(r, 1.0) ** 5)
    if family == "vdphi_bump":
        # resonance-aligned: the potential-weighted resonance profile
        return grid.field(soliton.potential(r, 1.0) * soliton.dphi_da(r, 1.0))
    if family == "pc_bump":
        if S is None:
            raise ConfigError("pc_bump family needs spectral data")
        b = bump_field(grid, center, width)
        nb = np.sqrt(inner_product(b, b))
        return grid.field(b.values / nb)
    raise ConfigError(f"unknown data family {family!r}")


def seeded_bumps(grid, seed, count, positive=True):
    """Deterministic family of smooth radial bumps for constant sweeps."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        center = rng.uniform(0.0, 3.5)
        width = rng.uniform(0.7, 2.0)
        amp = 1.0 if positive else rng.choice([-1.0, 1.0])
        out.append(grid.field(amp * np.exp(-((grid.r - center) ** 2) / width**2)))
    return out


def seeded_query(grid, S, eps, seed):
    """Perturbation pair for manifold studies: seeded mix of two bumps."""
    rng = np.random.default_rng(seed)
    c1, w1 = rng.uniform(1.0, 3.0), rng.uniform(0.8, 1.5)
    c2, w2 = rng.uniform(0.0, 2.0), rng.uniform(0.8, 1.5)
    mix = rng.uniform(0.2, 0.8)
    b = mix * np.exp(-((grid.r - c1) ** 2) / w1**2) + (1 - mix) * np.exp(
        -((grid.r - c2) ** 2) / w2**2
    )
    f = grid.field(b)
    nb = np.sqrt(inner_product(f, f))
    return make_query(S, grid.field(eps * b / nb), grid.zeros())


# ----------------------------------------------------------------------------
# experiment implementations


def _run_spectrum(cfg, outdir, report):
    grid = cfg.grid()
    S = ground_state(grid)
    rep = spectrum_report(S)
    # R-doubling at the same dr
    grid2 = RadialGrid(R=2 * grid.R, n=2 * grid.n - 1)
    S2 = ground_state(grid2)
    # dr-halving for Richardson and the overlap refinement
    gridh = RadialGrid(R=grid.R, n=2 * grid.n - 1)
    Sh = ground_state(gridh)
    k_rich1 = Sh.k + (Sh.k - S.k) / 3.0
    # scaling law at a = 4 with its own dr pair
    S4 = ground_state(grid, a=4.0)
    S4h = ground_state(gridh, a=4.0)
    k_rich4 = S4h.k + (S4h.k - S4.k) / 3.0

    rep.update(
        {
            "k_Rdoubled": S2.k,
            "k_drhalved": Sh.k,
            "k_richardson": k_rich1,
            "k4_richardson": k_rich4,
            "overlap_drhalved": Sh.overlap_g_resonance,
        }
    )
    report.records.append(rep)
    report.add_check("k_stable_under_R_doubling", abs(S2.k - S.k), 1e-8)
    report.add_check("eigen_residual", S.residual, 1e-6)
    report.add_check("overlap_g_daPhi", abs(S.overlap_g_resonance), 1e-4)
    report.add_check(
        "overlap_decreases",
        abs(Sh.overlap_g_resonance) / max(abs(S.overlap_g_resonance), 1e-300),
        1.0,
    )
    report.add_check("negative_count_is_one", abs(S.negative_count - 1), 0.5)
    report.add_check("scaling_k4_eq_2k1", abs(k_rich4 - 2.0 * k_rich1), 1e-4)
    _write(outdir, "g_profile.csv", S.g.to_csv())
    _write(outdir, "spectrum.json", json.dumps(rep, indent=2, sort_keys=True))
    _gnuplot(outdir, "g_profile", "g_profile.csv", "r", "g(r)")


def _run_stationarity(cfg, outdir, report):
    grid = cfg.grid()
    # PDE residual refinement
    resids = []
    for nn in (cfg.n, 2 * cfg.n - 1):
        gg = RadialGrid(R=cfg.R, n=nn)
        phi_f = soliton.phi_field(gg)
        res = laplacian(phi_f).values + phi_f.values**5
        half = gg.r <= gg.R / 2
        resids.append(float(np.max(np.abs(res[half]))))
    ratio = resids[0] / resids[1]
    pairing = resonance_pairing(grid)
    truth = np.pi * 3.0**0.25
    # stationary evolution
    dt = cfg.timestep(grid)
    S = ground_state(grid)
    run = evolve_nonlinear(
        soliton.phi_field(grid), grid.zeros(), min(cfg.T, 20.0), dt, S=S, stride=25
    )
    drift = max(
        h1_seminorm(run.psi.slice(m) - soliton.phi_field(grid), radius=grid.R_obs)
        for m in range(run.psi.samples.shape[0])
    )
    report.records.append(
        {
            "residual_coarse": resids[0],
            "residual_fine": resids[1],
            "refinement_ratio": ratio,
            "pairing_VdaPhi": pairing,
            "pairing_rel_err": abs(pairing - truth) / truth,
            "stationary_drift_H1": drift,
        }
    )
    report.add_check("residual_refinement_ratio", ratio, 3.0, op=">")
    report.add_check("residual_refinement_ratio_upper", ratio, 5.5)
    report.add_check("pairing_VdaPhi_rel_err", abs(pairing - truth) / truth, 1e-4)
    report.add_check("stationary_drift", drift, (grid.dr**2) * 10 + 1e-12)
    _write(
        outdir,
        "stationarity.csv",
        _csv(
            [(grid.dr, resids[0]), (grid.dr / 2, resids[1])],
            "dr,pde_residual_max",
        ),
    )
    _gnuplot(outdir, "stationarity", "stationarity.csv", "dr", "residual", logscale=True)


def _energy_drift(R, n, T, cfl, amp, seed):
    """Energy drift along a dispersive (soliton-free) solution over [0, T].

    Any generic near-soliton state departs along the unstable mode by
    t ~ 18 in double precision, so the long-horizon conservation check
    runs in the globally bounded small-data regime instead; with Dirichlet
    walls the energy on the full ball is conserved exactly in the
    continuum.
    """
    grid = RadialGrid(R=R, n=n)
    dt = cfl * grid.dr
    rng = np.random.default_rng(seed)
    b = bump_field(grid, rng.uniform(1.5, 2.5), 1.0)
    psi0 = RadialField(grid, amp * b.values)
    run = evolve_nonlinear(psi0, grid.zeros(), T, dt, stride=10)
    E = [
        energy(run.psi.slice(m), run.dpsi_dt.slice(m))
        for m in range(1, run.psi.samples.shape[0] - 1)
    ]
    E0 = E[0]
    drift = max(abs(e - E0) for e in E) / abs(E0)
    return drift, E0


def _run_energy(cfg, outdir, report):
    T = max(cfg.T, 50.0)
    amp = cfg.eps  # dispersive-pulse amplitude; see _energy_drift
    rows = []
    drifts = []
    for nn in (cfg.n, 2 * cfg.n - 1):
        drift, E0 = _energy_drift(cfg.R, nn, T, cfg.cfl, amp, cfg.seed)
        drifts.append(drift)
        rows.append((cfg.R / (nn - 1) * cfg.cfl, drift))
    report.records.append(
        {"drift_coarse": drifts[0], "drift_fine": drifts[1], "T": T, "E0": E0}
    )
    report.add_check("relative_drift", drifts[0], 1e-4)
    report.add_check("drift_refinement_ratio", drifts[0] / drifts[1], 2.5, op=">")
    _write(outdir, "energy_drift.csv", _csv(rows, "dt,relative_drift"))
    _gnuplot(outdir, "energy_drift", "energy_drift.csv", "dt", "drift", logscale=True)


def _strichartz_constants(grid, dt, T, members, mode, S):
    """Per-member reverse-Strichartz ratios for sine and cosine evolutions."""
    rows = []
    for i, f in enumerate(members):
        l2 = l2_norm(f)
        fs = RadialField(grid, f.values / l2)
        if mode == "free":
            traj = free_sine_traj(fs, T, dt)
        else:
            traj, _ = secular_decomposition_S(fs, T, dt, S)
        c1 = mixed_norm(traj, ("lorentz", 6, 2), "Linf_t")
        c2 = mixed_norm(traj, "Linf_x", "L2_t")
        # cosine with H1-normalized data
        h1 = h1_seminorm(f)
        fc = RadialField(grid, f.values / h1)
        if mode == "free":
            ctraj = free_cosine_traj(fc, T, dt)
        else:
            ctraj, _ = secular_decomposition_C(fc, T, dt, S)
        c3 = mixed_norm(ctraj, ("lorentz", 6, 2), "Linf_t")
        c4 = mixed_norm(ctraj, "Linf_x", "L2_t")
        # L^inf_x L^1_t against the Lorentz size of the data
        l321 = lorentz_norm(f, 1.5, 1)
        fl = RadialField(grid, f.values / l321)
        if mode == "free":
            ltraj = free_sine_traj(fl, T, dt)
        else:
            ltraj, _ = secular_decomposition_S(fl, T, dt, S)
        c5 = mixed_norm(ltraj, "Linf_x", "L1_t")
        rows.append((i, c1, c2, c3, c4, c5))
    return rows


def _run_strichartz(cfg, outdir, report, mode):
    grid = cfg.grid()
    dt = grid.dr  # exact transport for the free pieces
    T = min(cfg.T, grid.budget_horizon())
    S = ground_state(grid)
    members = seeded_bumps(grid, cfg.seed, 20)
    rows = _strichartz_constants(grid, dt, T, members, mode, S)
    cols = list(zip(*rows))
    names = ("sine_L62Linf_over_L2", "sine_LinfL2_over_L2",
             "cos_L62Linf_over_H1", "cos_LinfL2_over_H1",
             "sine_LinfL1_over_L321")
    fits = {}
    # the free-lemma constants are family-stable within x2; the perturbed
    # remainders vary more with how strongly a bump couples to the potential
    # well, so only uniform boundedness is demanded there
    fam_tol = 2.0 if mode == "free" else 8.0
    for name, vals in zip(names, cols[1:]):
        vals = np.array(vals)
        fits[name] = {"sup": float(vals.max()), "ratio": float(vals.max() / vals.min())}
        report.add_check(f"{name}_family_variation", vals.max() / vals.min(), fam_tol)
        report.add_check(f"{name}_finite", float(vals.max()), 1e6)
    # resolution stability on a refined grid
    grid2 = RadialGrid(R=cfg.R, n=2 * cfg.n - 1, R_obs=grid.R_obs)
    S2 = ground_state(grid2) if mode != "free" else None
    members2 = seeded_bumps(grid2, cfg.seed, 20)
    rows2 = _strichartz_constants(grid2, grid2.dr, T, members2, mode, S2 or S)
    cols2 = list(zip(*rows2))
    for name, v1, v2 in zip(names, cols[1:], cols2[1:]):
        ratio = max(np.array(v2)) / max(np.array(v1))
        fits[name]["resolution_ratio"] = float(ratio)
        report.add_check(
            f"{name}_resolution_variation", max(ratio, 1.0 / ratio), 2.0
        )
    report.fits.update(fits)
    report.records.extend(
        {"member": r[0], **{nm: v for nm, v in zip(names, r[1:])}} for r in rows
    )
    _write(
        outdir,
        f"strichartz_{mode}.csv",
        _csv(rows, "member," + ",".join(names)),
    )
    _gnuplot(outdir, f"strichartz_{mode}", f"strichartz_{mode}.csv", "member", "constant")


def _run_secular(cfg, outdir, report):
    grid = cfg.grid()
    dt = grid.dr
    S = ground_state(grid)
    f = family_field(grid, "vdphi_bump")
    horizons = [h for h in (25.0, 50.0, 100.0) if h <= grid.budget_horizon()]
    if len(horizons) < 3:
        raise ConfigError(
            "secular experiment needs R - R_obs >= 100 (horizons 25, 50, 100)"
        )
    Smax = max(horizons)
    S_traj, secular = secular_decomposition_S(f, Smax, dt, S, stride=2)
    rows = []
    s_norms = []
    full_l1 = []
    for T in horizons:
        St = S_traj.restricted(T)
        full = SpaceTimeField(
            grid, S_traj.dt, S_traj.samples + secular.samples
        ).restricted(T)
        ns = mixed_norm(St, "Linf_x", "L2_t")
        nf = mixed_norm(full, "Linf_x", "L1_t")
        s_norms.append(ns)
        full_l1.append(nf)
        rows.append((T, ns, nf))
    slope, _, stderr = _loglog_fit(horizons, full_l1)
    report.fits["secular_growth_exponent"] = {"slope": slope, "stderr": stderr}
    report.records.extend(
        {"T": T, "S_LinfL2": a, "full_LinfL1": b} for (T, a, b) in rows
    )
    report.add_check("S_bounded_variation", max(s_norms) / min(s_norms), 1.5)
    report.add_check("full_growth_exponent_low", slope, 0.85, op=">")
    report.add_check("full_growth_exponent_high", slope, 1.15)
    _write(outdir, "secular.csv", _csv(rows, "T,S_LinfL2,full_LinfL1"))
    _gnuplot(outdir, "secular", "secular.csv", "T", "norm", logscale=True)


def _run_pairing_identity(cfg, outdir, report):
    grid = cfg.grid()
    dt = grid.dr
    T = grid.R / 2.0
    psi1 = family_field(grid, "phi5")
    q = grid.field(
        soliton.potential(grid.r, 1.0) * soliton.dphi_da(grid.r, 1.0)
    )  # = Delta dphi_da
    M = int(round(T / dt))
    series = np.array(
        [
            inner_product(free_sine(psi1, m * dt, enforce_budget=False), q)
            for m in range(M + 1)
        ]
    )
    lhs = float(np.trapezoid(series, dx=dt))
    rhs = -inner_product(soliton.dphi_da_field(grid), psi1)
    scale = float(np.trapezoid(np.abs(series), dx=dt))
    rows = [((m * dt), float(np.trapezoid(series[: m + 1], dx=dt))) for m in range(0, M + 1, max(1, M // 200))]
    report.records.append(
        {"lhs_at_T": lhs, "rhs": rhs, "abs_mass_scale": scale, "T": T}
    )
    report.add_check("pairing_identity_rel_to_mass", abs(lhs - rhs) / scale, 0.01)
    _write(outdir, "pairing_identity.csv", _csv(rows, "T,integral"))
    _gnuplot(outdir, "pairing_identity", "pairing_identity.csv", "T", "integral")


def _shoot_point(args):
    (R, n, R_obs, T, cfl, seed, eps) = args
    grid = RadialGrid(R=R, n=n, R_obs=R_obs)
    dt = cfl * grid.dr
    S = ground_state(grid)
    query = seeded_query(grid, S, eps, seed)
    res = shoot_h(query, S, T, dt)
    # fixed-point h from the on-manifold trajectory
    phi_f = soliton.phi_field(grid)
    psi0 = RadialField(
        grid, phi_f.values + query.psi0_perturbation.values + res.h * S.g.values
    )
    psi1 = RadialField(grid, query.psi1.values + res.h * S.k * S.g.values)
    run = evolve_nonlinear(psi0, psi1, T, dt, S=S, keep_dense=True, keep_fields=False)
    # trim the residual-instability window at the end of the shoot (the final
    # bisection bracket leaves a growing amplitude ~ width * e^{kT}); the
    # truncated tail of the h integral is e^{-k(T-4)}-small
    M = int(round((T - 4.0) / dt))
    M = min(M, run.u_dense.shape[0] - 1)
    a_series = np.empty(M + 1)
    prev = 1.0
    for m in range(M + 1):
        prev = extract_modulation(
            RadialField(grid, run.u_dense[m] + soliton.phi(grid.r, 1.0)), S, a_prev=prev
        )
        a_series[m] = prev
    adot = np.gradient(a_series, dt)
    u_mod = SpaceTimeField(
        grid,
        dt,
        np.stack(
            [
                run.u_dense[m] + soliton.phi(grid.r, 1.0) - soliton.phi(grid.r, a_series[m])
                for m in range(M + 1)
            ]
        ),
    )
    hfp, tail = h_fixed_point(
        u_mod,
        a_series,
        adot,
        S,
        pert_overlap_w=pair_w(query.psi0_perturbation, S.g),
        psi1_overlap_w=pair_w(query.psi1, S.g),
    )
    return {
        "eps_nominal": eps,
        "eps": query.epsilon,
        "h_shoot": res.h,
        "h_fixed_point": hfp,
        "h_diff": abs(hfp - res.h),
        "bracket_width": res.bracket_width,
        "tail_bound": tail,
    }


def _run_h_scaling(cfg, outdir, report):
    sweep = cfg.sweep or (1e-4, 2e-4, 4e-4, 8e-4)
    args = [
        (cfg.R, cfg.n, cfg.R_obs or cfg.R / 3.0, cfg.T, cfg.cfl, cfg.seed, e)
        for e in sweep
    ]
    results = _pmap(_shoot_point, args, cfg.workers)
    report.records.extend(results)
    eps = [r["eps"] for r in results]
    hs = [abs(r["h_shoot"]) for r in results]
    slope, _, stderr = _loglog_fit(eps, hs)
    report.fits["h_scaling"] = {"slope": slope, "stderr": stderr}
    report.add_check("h_loglog_slope_low", slope, 1.9, op=">")
    report.add_check("h_loglog_slope_high", slope, 2.1)
    for r in results:
        report.add_check(
            f"h_agreement_eps_{r['eps_nominal']:g}",
            r["h_diff"],
            1e-3 * r["eps"] ** 2,
        )
    _write(
        outdir,
        "h_scaling.csv",
        _csv(
            [(r["eps"], abs(r["h_shoot"]), abs(r["h_fixed_point"])) for r in results],
            "eps,abs_h_shoot,abs_h_fixed_point",
        ),
    )
    _gnuplot(outdir, "h_scaling", "h_scaling.csv", "eps", "|h|", logscale=True)


def _run_codim1(cfg, outdir, report):
    grid = cfg.grid()
    dt = cfg.timestep(grid)
    S = ground_state(grid)
    query = seeded_query(grid, S, cfg.eps, cfg.seed)
    res = shoot_h(query, S, cfg.T, dt)
    phi_f = soliton.phi_field(grid)
    rows = []
    signs = {}
    for offset in (+1e-6, -1e-6):
        h = res.h + offset
        psi0 = RadialField(
            grid, phi_f.values + query.psi0_perturbation.values + h * S.g.values
        )
        psi1 = RadialField(grid, query.psi1.values + h * S.k * S.g.values)
        run = evolve_nonlinear(
            psi0, psi1, cfg.T, dt, S=S, overlap_cap=0.1, keep_fields=False
        )
        ov = run.g_overlap
        t = run.times_dense
        window = (np.abs(ov) > 10 * abs(offset)) & (np.abs(ov) < 0.05)
        rate = np.polyfit(t[window], np.log(np.abs(ov[window])), 1)[0]
        rows.append((offset, rate, run.exit_sign or np.sign(ov[-1])))
        signs[offset] = np.sign(ov[-1])
        report.records.append(
            {
                "offset": offset,
                "rate": float(rate),
                "rate_rel_err": float(abs(rate - S.k) / S.k),
                "exit_sign": float(np.sign(ov[-1])),
                "status": run.status,
            }
        )
        report.add_check(
            f"departure_rate_offset_{offset:+.0e}", abs(rate - S.k) / S.k, 0.02
        )
    report.add_check(
        "opposite_exit_signs", -(signs[1e-6] * signs[-1e-6]), 0.0, op=">"
    )
    _write(outdir, "codim1.csv", _csv(rows, "offset,rate,exit_sign"))
    _gnuplot(outdir, "codim1", "codim1.csv", "offset", "rate")


def _manifold_trajectory(grid, S, query, T, dt, trim=4.0):
    # tighter-than-default bracket: the residual growing amplitude
    # (~ tol * e^{kT}) must stay below the smallest trajectory differences
    # measured downstream
    res = shoot_h(query, S, T, dt, tol=1e-15 * max(query.epsilon, 1e-6))
    phi_f = soliton.phi_field(grid)
    psi0 = RadialField(
        grid, phi_f.values + query.psi0_perturbation.values + res.h * S.g.values
    )
    psi1 = RadialField(grid, query.psi1.values + res.h * S.k * S.g.values)
    run = evolve_nonlinear(psi0, psi1, T - trim, dt, S=S, stride=5)
    traj = trajectory_modulation(run, S)
    return res, run, traj


def _run_adot_l1(cfg, outdir, report):
    grid = cfg.grid()
    dt = cfg.timestep(grid)
    S = ground_state(grid)
    sweep = cfg.sweep or (1e-3, 3e-3, 1e-2)
    rows = []
    consts = []
    for e in sweep:
        query = seeded_query(grid, S, e, cfg.seed)
        res, run, traj = _manifold_trajectory(grid, S, query, cfg.T, dt)
        mixed = max(d.value for d in traj.diagnostics)
        consts.append(mixed / query.epsilon)
        rows.append((query.epsilon, traj.adot_l1, mixed, traj.adot_l1 / query.epsilon))
        report.records.append(
            {
                "eps": query.epsilon,
                "adot_l1": traj.adot_l1,
                "mixed_norm": mixed,
                "window_ok": traj.window_ok,
            }
        )
    ratios = [r[3] for r in rows]
    report.fits["adot_l1_over_eps"] = {"values": ratios}
    report.add_check("adot_l1_constant_stable", max(ratios) / max(min(ratios), 1e-300), 3.0)
    report.add_check("mixed_norm_constant_stable", max(consts) / min(consts), 3.0)
    # consistency of the two adot routes on the last trajectory
    tv = float(np.sum(np.abs(np.diff(traj.a))))
    report.add_check(
        "extraction_vs_condition_tv",
        abs(tv - traj.adot_l1) / max(traj.adot_l1, 1e-300),
        0.05,
    )
    _write(outdir, "adot_l1.csv", _csv(rows, "eps,adot_l1,mixed_norm,adot_l1_over_eps"))
    _gnuplot(outdir, "adot_l1", "adot_l1.csv", "eps", "adot L1", logscale=True)


def _run_lipschitz(cfg, outdir, report):
    grid = cfg.grid()
    dt = cfg.timestep(grid)
    S = ground_state(grid)
    deltas = cfg.sweep or (1e-4, 1e-3)
    base = seeded_query(grid, S, cfg.eps, cfg.seed)
    res0, run0, traj0 = _manifold_trajectory(grid, S, base, cfg.T, dt)
    rows = []
    consts = []
    for d in deltas:
        other_pert = RadialField(
            grid,
            base.psi0_perturbation.values
            + d * bump_field(grid, 1.5, 1.2).values / l2_norm(bump_field(grid, 1.5, 1.2)),
        )
        other = make_query(S, other_pert, grid.zeros())
        dist = h1_seminorm(
            RadialField(
                grid, other.psi0_perturbation.values - base.psi0_perturbation.values
            )
        )
        res1, run1, traj1 = _manifold_trajectory(grid, S, other, cfg.T, dt)
        m = min(traj0.u_snapshots.samples.shape[0], traj1.u_snapshots.samples.shape[0])
        diff = SpaceTimeField(
            grid,
            traj0.u_snapshots.dt,
            traj1.u_snapshots.samples[:m] - traj0.u_snapshots.samples[:m],
        )
        dnorm = mixed_norm(diff, ("lorentz", 6, 2), "Linf_t")
        consts.append(dnorm / dist)
        rows.append((dist, dnorm, dnorm / dist, abs(res1.h - res0.h)))
        report.records.append(
            {"delta": dist, "traj_distance": dnorm, "h_shift": abs(res1.h - res0.h)}
        )
    report.fits["lipschitz_constants"] = {"values": consts}
    report.add_check("lipschitz_constant_stable", max(consts) / min(consts), 3.0)
    _write(outdir, "lipschitz.csv", _csv(rows, "delta,traj_distance,constant,h_shift"))
    _gnuplot(outdir, "lipschitz", "lipschitz.csv", "delta", "distance", logscale=True)


def _run_contraction(cfg, outdir, report):
    grid = cfg.grid()
    dt = cfg.timestep(grid)
    S = ground_state(grid)
    T = min(cfg.T, grid.budget_horizon())
    eps_list = cfg.sweep or (1e-3, 2e-3)
    ratios = []
    for e in eps_list:
        query = seeded_query(grid, S, e, cfg.seed)
        p1 = picard_map(None, None, None, query, S, T, dt)
        q2 = seeded_query(grid, S, e, cfg.seed + 1)
        p2 = picard_map(None, None, None, q2, S, T, dt)
        f1 = picard_map(p1.u, p1.a, p1.adot, query, S, T, dt)
        f2 = picard_map(p2.u, p2.a, p2.adot, query, S, T, dt)
        num = x_norm(
            SpaceTimeField(grid, dt, f1.u.samples - f2.u.samples), f1.adot - f2.adot, dt
        )
        den = x_norm(
            SpaceTimeField(grid, dt, p1.u.samples - p2.u.samples), p1.adot - p2.adot, dt
        )
        ratios.append(num / den)
        report.records.append({"eps": e, "contraction_ratio": num / den})
        report.add_check(f"contraction_ratio_eps_{e:g}", num / den, 1.0)
    if len(ratios) >= 2:
        order = np.argsort(eps_list)
        sorted_r = np.array(ratios)[order]
        report.add_check("ratio_decreases_with_eps", sorted_r[0] / sorted_r[-1], 1.0)
    _write(
        outdir,
        "contraction.csv",
        _csv(list(zip(eps_list, ratios)), "eps,contraction_ratio"),
    )
    _gnuplot(outdir, "contraction", "contraction.csv", "eps", "ratio", logscale=True)


def _run_weighted_growth(cfg, outdir, report):
    grid = cfg.grid()
    dt = cfg.timestep(grid)
    S = ground_state(grid)
    query = seeded_query(grid, S, cfg.eps, cfg.seed)
    res = shoot_h(query, S, cfg.T, dt)
    phi_f = soliton.phi_field(grid)
    psi0 = RadialField(
        grid, phi_f.values + query.psi0_perturbation.values + res.h * S.g.values
    )
    psi1 = RadialField(grid, query.psi1.values + res.h * S.k * S.g.values)
    run = evolve_nonlinear(psi0, psi1, 5.0, dt, S=S, stride=5)
    from .grid import weighted_norm

    rows = []
    for m in range(run.psi.samples.shape[0]):
        t = m * run.psi.dt
        dvals = RadialField(grid, run.psi.samples[m] - phi_f.values)
        D = weighted_norm(dvals, "<x>^-1 H1", radius=grid.R_obs)
        rows.append((t, D))
    t = np.array([r[0] for r in rows])
    D = np.array([r[1] for r in rows])
    C = float(np.max(D / (np.exp(t) * query.epsilon)))
    mask = t >= 0.5
    slope = float(np.polyfit(t[mask], np.log(np.maximum(D[mask], 1e-300)), 1)[0])
    report.records.append({"C": C, "exponent": slope, "eps": query.epsilon})
    report.fits["weighted_growth"] = {"C": C, "exponent": slope}
    report.add_check("bounded_by_C_exp_t", C, 1e3)
    report.add_check("growth_exponent", slope, 1.1)
    _write(outdir, "weighted_growth.csv", _csv(rows, "t,weighted_H1"))
    _gnuplot(outdir, "weighted_growth", "weighted_growth.csv", "t", "norm")


def _pmap(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


_RUNNERS = {
    "spectrum": _run_spectrum,
    "stationarity": _run_stationarity,
    "energy_conservation": _run_energy,
    "strichartz_free": lambda c, o, r: _run_strichartz(c, o, r, "free"),
    "strichartz_perturbed": lambda c, o, r: _run_strichartz(c, o, r, "perturbed"),
    "secular": _run_secular,
    "pairing_identity": _run_pairing_identity,
    "h_scaling": _run_h_scaling,
    "codim1": _run_codim1,
    "lipschitz": _run_lipschitz,
    "contraction": _run_contraction,
    "adot_l1": _run_adot_l1,
    "weighted_growth": _run_weighted_growth,
}

_SCHEMA = """# Emitted file schemas

All CSVs carry a single header row; floats use up to 17 significant digits.

- `g_profile.csv`: `r,value` - ground-state eigenfunction samples.
- `spectrum.json`: `{R, n, a, k, residual, overlap_g_daPhi, pairing_VdaPhi, negative_count, ...}`.
- `stationarity.csv`: `dr,pde_residual_max` - elliptic residual under refinement.
- `energy_drift.csv`: `dt,relative_drift` - energy conservation under dt halving (CFL locked).
- `strichartz_{free,perturbed}.csv`: `member,<constant columns>` - per-member reverse-Strichartz ratios.
- `secular.csv`: `T,S_LinfL2,full_LinfL1` - dispersive-part boundedness vs secular growth.
- `pairing_identity.csv`: `T,integral` - running resonance pairing integral.
- `h_scaling.csv`: `eps,abs_h_shoot,abs_h_fixed_point` - manifold offset vs perturbation size.
- `codim1.csv`: `offset,rate,exit_sign` - departure rates for off-manifold offsets.
- `adot_l1.csv`: `eps,adot_l1,mixed_norm,adot_l1_over_eps`.
- `lipschitz.csv`: `delta,traj_distance,constant,h_shift`.
- `contraction.csv`: `eps,contraction_ratio`.
- `weighted_growth.csv`: `t,weighted_H1`.
- `trajectory.csv` (manifold runs): `t,a,adot,x_plus,x_minus,g_overlap`.
- `report.json`: config echo, per-run records, fits with uncertainties, explicit pass/fail checks.
"""


def run(config):
    """Execute the named experiment; returns an ExperimentReport.

    Module-level typed failures become failed runs recorded in the report;
    configuration errors raise ConfigError.
    """
    issues = validate(config)
    if issues:
        raise ConfigError("; ".join(issues))
    outdir = config.output_dir
    report = ExperimentReport(
        experiment=config.experiment,
        config={k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()},
    )
    runner = _RUNNERS[config.experiment]
    try:
        runner(config, outdir, report)
    except (ConfigError,):
        raise
    except Exception as exc:  # typed module failures become failed records
        report.records.append({"error": f"{type(exc).__name__}: {exc}"})
        report.add_check("run_completed", 1.0, 0.5)
    _write(outdir, "report.json", report.to_json())
    _write(outdir, "SCHEMA.md", _SCHEMA)
    return report
