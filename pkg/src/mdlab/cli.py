"""Experiment runner: configuration, subcommands, deterministic outputs.

Every run writes one directory holding a ``manifest.json`` (config echo,
config hash, git revision, wall clock) plus CSV tables.  CSV content is
bit-reproducible for a fixed config and seed; wall-clock only ever appears
in the manifest.
"""

import argparse
import csv
import hashlib
import json
import subprocess
import sys
import time

try:
    import tomllib
except ImportError:          # python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_IDENTITY_FAILURE = 1
EXIT_RUNTIME_ERROR = 2


@dataclass
class ExperimentConfig:
    d: int = 3
    n: int = 32
    L_factor: float = 1.0        # torus period = 2 pi L_factor
    nt: int = 64
    window: float = 0.8          # evolution window
    dt: float = 0.025
    tukey_alpha: float = 0.25
    eps: float = 1e-2
    seed: int = 7
    sigma: float = 0.1
    para_C: int = 2
    eps_sweep: list = field(default_factory=lambda: [0.02, 0.01])
    sigma_sweep: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    theta_sweep: list = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    picard_iters: int = 3
    knapp_k: int = 4
    knapp_kp: int = 2
    knapp_lp: int = -1
    threads: int = 1
    out: str = "runs/out"

    def validate(self):
        if not (1 <= self.d <= 4):
            raise ValueError("d must be in 1..4")
        if self.n & (self.n - 1):
            raise ValueError("n must be a power of two")
        if self.dt <= 0 or self.window <= 0 or self.eps <= 0:
            raise ValueError("dt, window and eps must be positive")
        return self

    def hash(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(args):
    cfg = ExperimentConfig()
    if args.config:
        raw = tomllib.loads(Path(args.config).read_text())
        fields = set(cfg.__dataclass_fields__)
        unknown = set(raw) - fields
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = replace(cfg, **raw)
    for key in ("d", "n", "eps", "seed", "threads", "out"):
        val = getattr(args, key, None)
        if val is not None:
            cfg = replace(cfg, **{key: val})
    return cfg.validate()


def _git_revision():
    try:
        return subprocess.run(["git", "rev-parse", "HEAD"], cwd=Path(__file__).parent,
                              capture_output=True, text=True, timeout=5,
                              check=False).stdout.strip() or "unknown"
    except OSError:
        return "unknown"


def write_manifest(outdir, cfg, extra=None, started=None):
    manifest = {
        "config": asdict(cfg),
        "config_hash": cfg.hash(),
        "git_revision": _git_revision(),
        "wall_clock_s": None if started is None else time.perf_counter() - started,
    }
    if extra:
        manifest.update(extra)
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=1,
                                                     sort_keys=True))


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _outdir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# verify-algebra

def _algebra_checks(d, corrupt=False):
    """Machine-exact identity suite; yields (name, defect, tolerance)."""
    from . import parametrix as P
    from .clifford import (build_gamma_rep, commutation_defect,
                           halfwave_split_defect, pi_matrix)
    from .grid import Grid, random_band_limited
    from .multipliers import leray
    from .nonlinearity import (GaugePotential, HalfWavePair,
                               cov_dirac_rhs_direct, cov_dirac_rhs_split,
                               maxwell_R_vec, maxwell_S_vec,
                               maxwell_source_vec, apply_pi)

    rng = np.random.default_rng(101 + d)
    rep = build_gamma_rep(d)
    if corrupt:
        gamma = [m.copy() for m in rep.gamma]
        gamma[1][0, -1] *= -1          # test hook: break one sign
        alpha = [rep.alpha[0]] + [gamma[0] @ gmm for gmm in gamma[1:]]
        rep = type(rep)(d=rep.d, N=rep.N, gamma=tuple(gamma),
                        alpha=tuple(alpha))

    eye = np.eye(rep.N)
    worst = 0.0
    for mu in range(d + 1):
        for nu in range(d + 1):
            eta = -1.0 if mu == nu == 0 else (1.0 if mu == nu else 0.0)
            anti = (rep.gamma[mu] @ rep.gamma[nu]
                    + rep.gamma[nu] @ rep.gamma[mu]) / 2
            worst = max(worst, float(np.max(np.abs(anti + eta * eye))))
    yield "gamma_anticommutation", worst, 1e-14

    worst = max(float(np.max(np.abs(rep.gamma[mu].conj().T
                                    - rep.gamma[0] @ rep.gamma[mu] @ rep.gamma[0])))
                for mu in range(d + 1))
    yield "gamma_conjugation", worst, 1e-14

    worst = 0.0
    for _ in range(50):
        xi = rng.standard_normal(d)
        plus = pi_matrix(rep, xi, +1)
        minus = pi_matrix(rep, xi, -1)
        worst = max(worst,
                    float(np.max(np.abs(plus + minus - eye))),
                    float(np.max(np.abs(plus @ plus - plus))),
                    float(np.max(np.abs(plus @ pi_matrix(rep, -xi, +1)))))
    yield "projector_identities", worst, 1e-13

    worst = 0.0
    for _ in range(30):
        xi = rng.standard_normal(d)
        for j in range(1, d + 1):
            for s in (+1, -1):
                worst = max(worst, float(np.max(np.abs(
                    commutation_defect(rep, xi, j, s)))))
    yield "commutation_defect", worst, 1e-13

    gsm = Grid(d=d, n=8, L=2 * np.pi, nt=8, T=2 * np.pi)
    psi_st = random_band_limited(gsm, rng, ncomp=rep.N, spacetime=True)
    yield ("halfwave_split",
           halfwave_split_defect(rep, psi_st) / max(psi_st.l2(), 1e-300),
           1e-12)

    gn = Grid(d=d, n=16 if d < 4 else 8)
    band = (1.0, 3.0) if d < 4 else (1.0, 2.0)
    psi = random_band_limited(gn, rng, ncomp=rep.N, band=band)
    ax = leray(random_band_limited(gn, rng, ncomp=d, real=True, band=band))
    a0 = random_band_limited(gn, rng, real=True, band=band)
    total = None
    for s in (+1, -1):
        proj = apply_pi(rep, psi, s).to_phys()
        term = (-float(s)) * maxwell_R_vec(rep, psi, proj) \
            + maxwell_S_vec(rep, psi, proj, s)
        total = term if total is None else total + term
    direct = maxwell_source_vec(rep, psi, psi)
    yield ("maxwell_resynthesis",
           (total - direct).l2() / max(direct.l2(), 1e-300), 1e-10)

    pot = GaugePotential(a0=a0, ax=ax, coulomb_tol=0.0)
    pair = HalfWavePair(plus=apply_pi(rep, psi, +1),
                        minus=apply_pi(rep, psi, -1))
    one = cov_dirac_rhs_direct(rep, pot, pair)
    other = cov_dirac_rhs_split(rep, pot, pair)
    worst = max((one[s] - other[s]).l2() / max(one[s].l2(), 1e-300)
                for s in (+1, -1))
    yield "dirac_full_synthesis", worst, 1e-10

    gst = Grid(d=d, n=16 if d < 4 else 8, L=2 * np.pi * 8,
               nt=12, T=2 * np.pi)
    band = {2: (0.5, 1.6), 3: (0.3, 0.8), 4: (0.15, 0.4)}[d] if d > 1 else (0.3, 0.8)
    phi = random_band_limited(gst, rng, spacetime=True, band=band)
    pot_free = P.make_free_potential(gst, 0.1)
    yield "covop_reduction", P.covop_reduction_defect(phi, pot_free), 1e-9


def cmd_verify_algebra(cfg, dims=None, corrupt=False):
    outdir = _outdir(cfg)
    started = time.perf_counter()
    dims = dims or [2, 3, 4]
    rows = []
    failed = []
    for d in dims:
        for name, defect, tol in _algebra_checks(d, corrupt=corrupt):
            ok = defect <= tol
            rows.append((d, name, float(defect), float(tol), int(ok)))
            if not ok:
                failed.append(f"d={d}:{name}")
    write_csv(outdir / "identities.csv",
              ["d", "identity", "max_defect", "tolerance", "passed"], rows)
    report = {"failed": failed,
              "max_defects": {f"d{d}_{name}": defect
                              for d, name, defect, _, _ in rows}}
    (outdir / "report.json").write_text(json.dumps(report, indent=1,
                                                   sort_keys=True))
    write_manifest(outdir, cfg, extra={"command": "verify-algebra"},
                   started=started)
    if failed:
        print("FAILED identities:", ", ".join(failed))
        return EXIT_IDENTITY_FAILURE
    print(f"all identities passed for d in {list(dims)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evolve / picard

def cmd_evolve(cfg):
    from .clifford import build_gamma_rep
    from .evolve import gaussian_packet_data, initial_state, run
    from .grid import Grid

    outdir = _outdir(cfg)
    started = time.perf_counter()
    rep = build_gamma_rep(cfg.d)
    grid = Grid(d=cfg.d, n=cfg.n, L=2 * np.pi * cfg.L_factor)
    psi, ax, axd = gaussian_packet_data(rep, grid, cfg.eps, seed=cfg.seed)
    state = initial_state(rep, psi, ax, axd)
    report, _ = run(state, T=cfg.window, dt=cfg.dt, report_every=1)
    report.to_csv(outdir / "evolution.csv", drop_wall_clock=True)
    (outdir / "summary.json").write_text(
        json.dumps(report.summary(), indent=1, sort_keys=True))
    write_manifest(outdir, cfg, extra={"command": "evolve"}, started=started)
    return EXIT_OK


def _picard_point(args):
    d, n, L_factor, window, dt, iters, eps, seed = args
    from .clifford import build_gamma_rep
    from .evolve import gaussian_packet_data, picard_outer
    from .grid import Grid

    rep = build_gamma_rep(d)
    grid = Grid(d=d, n=n, L=2 * np.pi * L_factor)
    psi, ax, axd = gaussian_packet_data(rep, grid, eps, seed=seed)
    dists, _ = picard_outer(rep, psi, ax, axd, T=window, dt=dt, n_iters=iters)
    return eps, dists


def cmd_picard(cfg):
    outdir = _outdir(cfg)
    started = time.perf_counter()
    points = [(cfg.d, cfg.n, cfg.L_factor, cfg.window, cfg.dt,
               cfg.picard_iters, eps, cfg.seed) for eps in cfg.eps_sweep]
    results = _map_points(_picard_point, points, cfg.threads)
    rows = []
    for eps, dists in results:
        ratios = [dists[i + 1] / dists[i] if dists[i] > 0 else float("nan")
                  for i in range(len(dists) - 1)]
        for i, dval in enumerate(dists):
            rows.append((float(eps), i + 1, float(dval),
                         float(ratios[i - 1]) if 0 < i <= len(ratios) else ""))
    write_csv(outdir / "contraction.csv",
              ["eps", "iterate", "distance", "ratio"], rows)
    write_manifest(outdir, cfg, extra={
        "command": "picard",
        "norm": "sup_t max_s L2 of half-wave component differences",
    }, started=started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parametrix

def _parametrix_point(args):
    (d, n, L_factor, sigma, para_C, eps, seed, nt) = args
    from . import parametrix as P
    from .grid import Field, Grid

    grid = Grid(d=d, n=n, L=2 * np.pi * L_factor)
    rng = np.random.default_rng(seed)
    modes = P.annulus_modes(grid, 0.6, 1.55)
    rng.shuffle(modes)
    keep = [tuple(v) for v in modes[:30]]

    def sparse(seed2):
        r = np.random.default_rng(seed2)
        spec = np.zeros(grid.spatial_shape(), complex)
        for v in keep:
            spec[tuple(np.array(v) % grid.n)] = (r.standard_normal()
                                                 + 1j * r.standard_normal())
        return Field(grid, spec, "spec", 0)

    f = sparse(seed + 1)
    xin = grid.xi_norm_grid()
    F = P.ModeField(grid=grid, terms=[(sparse(seed + 2).data, xin + 0.05, 0)])
    times = np.linspace(0, 2 * np.pi, nt + 1)
    fn = P.JetSeries.from_modefield(F, times).l2t_l2x()
    pot = P.make_free_potential(grid, eps, seed=seed + 3)
    phase = P.build_phase(pot, +1, sigma=sigma, C=para_C, retained=keep)
    comp = P.composition_defect(phase, f, times[::16])
    hw = P.halfwave_parametrix(f, F, pot, times, sigma=sigma, C=para_C,
                               retained=keep)
    it = P.iterate_to_solution(f, F, pot, times, tol=1e-10, max_iters=3,
                               sigma=sigma, C=para_C, retained=keep)
    ns = it["residual_norms"]
    out = [("composition_defect_sup", comp, 0),
           ("halfwave_residual_L2tL2x", hw["residual"].l2t_l2x() / fn, 0),
           ("halfwave_residual_L1tL2x", hw["residual"].l1t_l2x() / fn, 0),
           ("data_defect_L2x", hw["data_defect"] / fn, 0)]
    for i, nv in enumerate(ns):
        out.append(("iterate_residual", nv / fn, i + 1))
    return eps, sigma, out


def cmd_parametrix(cfg):
    outdir = _outdir(cfg)
    started = time.perf_counter()
    eps_list = cfg.eps_sweep or [cfg.eps]
    points = [(cfg.d if cfg.d <= 2 else 2, cfg.n, 8.0, sigma, cfg.para_C,
               eps, cfg.seed, 64)
              for sigma in cfg.sigma_sweep for eps in eps_list]
    results = _map_points(_parametrix_point, points, cfg.threads)
    rows = []
    for eps, sigma, table in results:
        for name, value, iterate in table:
            rows.append((float(eps), float(sigma), name, float(value),
                         iterate))
    write_csv(outdir / "residuals.csv",
              ["eps", "sigma", "norm_name", "value", "iterate"], rows)
    write_manifest(outdir, cfg, extra={
        "command": "parametrix",
        "norm_proxies": "L2tL2x, L1tL2x, sup-in-t L2x on the sampled window",
    }, started=started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# knapp / nullform

def cmd_knapp(cfg):
    from .nullform import knapp_report, knapp_wave

    outdir = _outdir(cfg)
    started = time.perf_counter()
    wave = knapp_wave(cfg.d, cfg.knapp_k, cfg.knapp_kp, cfg.knapp_lp)
    rep = knapp_report(wave, per_axis=5, n_times=5)
    write_csv(outdir / "knapp.csv",
              ["d", "k", "k_prime", "l_prime", "slab_min", "peak0",
               "late_max", "coherence_time", "modes"],
              [(cfg.d, cfg.knapp_k, cfg.knapp_kp, cfg.knapp_lp,
                rep["slab_min"], rep["peak0"], rep["late_max"],
                rep["coherence_time"], rep["modes"])])
    # |u| heatmap over the (x1, x2) plane at t = 0 for the figure pipeline
    c = 2.5 * 2.0 ** -cfg.knapp_kp
    c2 = 2.5 * 2.0 ** (-cfg.knapp_kp - cfg.knapp_lp)
    x1 = np.linspace(-c, c, 41)
    x2 = np.linspace(-c2, c2, 41)
    rows = []
    for a in x1:
        pts = np.zeros((len(x2), cfg.d))
        pts[:, 0] = a
        pts[:, 1] = x2
        vals = wave.eval(0.0, pts)[0]
        rows.extend((float(a), float(b), float(v)) for b, v in zip(x2, vals))
    write_csv(outdir / "knapp_field.csv", ["x1", "x2", "abs_u"], rows)
    write_manifest(outdir, cfg, extra={
        "command": "knapp",
        "dual_box": {"x1_half_width": 0.25 * 2.0 ** -cfg.knapp_kp,
                     "trans_half_width": 0.25 * 2.0 ** (-cfg.knapp_kp
                                                        - cfg.knapp_lp)},
    }, started=started)
    return EXIT_OK


def cmd_nullform(cfg):
    from .clifford import build_gamma_rep
    from .nullform import (angle_gain_scan, spinorial_symbol,
                           transversal_scan, wedge_symbol)

    outdir = _outdir(cfg)
    started = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for name, symbol, d_scan, k_scan in (
            ("wedge", wedge_symbol, 2, 5),
            ("constant", lambda a, b: 1.0, 2, 5)):
        for r in angle_gain_scan(symbol, cfg.theta_sweep, rng, d=d_scan,
                                 k=k_scan):
            rows.append((name, float(r["theta"]), float(r["R"]),
                         float(r["ratio"])))
    rep3 = build_gamma_rep(3)
    v1 = rng.standard_normal(rep3.N) + 1j * rng.standard_normal(rep3.N)
    v2 = rng.standard_normal(rep3.N) + 1j * rng.standard_normal(rep3.N)
    v1 /= np.linalg.norm(v1)
    v2 /= np.linalg.norm(v2)
    for r in angle_gain_scan(spinorial_symbol(rep3, v1, v2), cfg.theta_sweep,
                             rng, d=3, k=6):
        rows.append(("spinorial", float(r["theta"]), float(r["R"]),
                     float(r["ratio"])))
    write_csv(outdir / "gain.csv", ["symbol", "theta", "R", "ratio"], rows)

    trows = []
    for r in transversal_scan(rng, d=4, k1=9, k2=9, kp=7, lp=-4,
                              ell_tildes=[-1, -2, -3], flat=True):
        trows.append((float(r["ell_tilde"]), r["k_prime"], r["l_prime"],
                      float(r["lhs"]), float(r["rhs_scale"]),
                      float(r["ratio"])))
    for kp, lp in ((2, 0), (3, 0)):
        for r in transversal_scan(rng, d=4, k1=7, k2=7, kp=kp, lp=lp,
                                  ell_tildes=[-1], nt=129):
            trows.append((float(r["ell_tilde"]), r["k_prime"], r["l_prime"],
                          float(r["lhs"]), float(r["rhs_scale"]),
                          float(r["ratio"])))
    write_csv(outdir / "transversal.csv",
              ["ell_tilde", "k_prime", "l_prime", "lhs", "rhs_scale",
               "ratio"], trows)
    write_manifest(outdir, cfg, extra={"command": "nullform"},
                   started=started)
    return EXIT_OK


# ---------------------------------------------------------------------------

def _map_points(fn, points, threads):
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, points))
    return [fn(p) for p in points]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mdlab", description="spectral Maxwell-Dirac laboratory")
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--d", type=int)
    parser.add_argument("--n", type=int)
    parser.add_argument("--eps", type=float)
    sub = parser.add_subparsers(dest="command", required=True)
    va = sub.add_parser("verify-algebra", help="machine-exact identity suite")
    va.add_argument("--dims", type=int, nargs="*", default=None)
    va.add_argument("--corrupt", action="store_true",
                    help="test hook: flip one sign in gamma^1")
    for name in ("evolve", "picard", "parametrix", "knapp", "nullform"):
        sub.add_parser(name)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR
    handlers = {
        "verify-algebra": lambda: cmd_verify_algebra(
            cfg,
            dims=(args.dims or ([args.d] if args.d else None))
            if args.command == "verify-algebra" else None,
            corrupt=getattr(args, "corrupt", False)),
        "evolve": lambda: cmd_evolve(cfg),
        "picard": lambda: cmd_picard(cfg),
        "parametrix": lambda: cmd_parametrix(cfg),
        "knapp": lambda: cmd_knapp(cfg),
        "nullform": lambda: cmd_nullform(cfg),
    }
    try:
        return handlers[args.command]()
    except Exception as exc:   # surfaced with context, partial outputs flagged
        print(f"runtime error in {args.command}: {exc}", file=sys.stderr)
        outdir = Path(cfg.out)
        if outdir.exists():
            (outdir / "manifest.json").write_text(json.dumps(
                {"config": asdict(cfg), "config_hash": cfg.hash(),
                 "command": args.command, "partial": True,
                 "error": str(exc)}, indent=1, sort_keys=True))
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
