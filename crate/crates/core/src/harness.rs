//! Run configuration, simulation and refinement drivers writing CSV, and the property
//! verification suite behind the `mspde` binary.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::LagrangeBasis;
use crate::diagnostics::{all_local_conservation_residuals, bochner_error, global_invariants, ConvergenceRecord, InvariantSeries};
use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::mesh::uniform_partition;
use crate::operator::{g_identity_residuals, GOperator};
use crate::problem::{linear_wave, nls, nls_soliton, nonlinear_wave, problem_by_label, validate, Check, MultisymplecticProblem};
use crate::quadrature::gauss_legendre;
use crate::solver::{Discretisation, SchemeVariant, SolverConfig};
use crate::space::{Continuity, SlabCoefficients, SpatialSpace, TemporalSlab};

pub const INVARIANTS_FILE: &str = "invariants.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";

/// Everything a command needs; unset step sizes fall back to per-problem defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub variant: SchemeVariant,
    pub q: usize,
    pub p: usize,
    pub dt: Option<f64>,
    pub dx: Option<f64>,
    /// Refinement level `i`: both steps from the problem's level-`i` grid.
    pub level: Option<i32>,
    pub i_min: i32,
    pub i_max: i32,
    pub t_final: Option<f64>,
    pub out: PathBuf,
    pub seed: u64,
    pub newton_tolerance: f64,
    pub max_newton_iterations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            problem: "linear-wave".into(),
            variant: SchemeVariant::CgPrimary,
            q: solver.q,
            p: solver.p,
            dt: None,
            dx: None,
            level: None,
            i_min: 2,
            i_max: 5,
            t_final: None,
            out: PathBuf::from("."),
            seed: 0,
            newton_tolerance: solver.newton_tolerance,
            max_newton_iterations: solver.max_newton_iterations,
        }
    }
}

/// `key = value` pairs, one per line; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::invalid(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::invalid(format!("bad value '{value}' for '{key}'")))
}

impl RunConfig {
    /// Set one option by name (the names used by config files and flags).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "problem" => {
                if problem_by_label(value).is_none() {
                    return Err(Error::invalid(format!("unknown problem '{value}' (expected linear-wave, nonlinear-wave or nls)")));
                }
                self.problem = value.to_string();
            }
            "variant" => self.variant = value.parse()?,
            "q" => self.q = parse(key, value)?,
            "p" => self.p = parse(key, value)?,
            "dt" => self.dt = Some(parse(key, value)?),
            "dx" => self.dx = Some(parse(key, value)?),
            "i" => self.level = Some(parse(key, value)?),
            "imin" => self.i_min = parse(key, value)?,
            "imax" => self.i_max = parse(key, value)?,
            "T" | "t" => self.t_final = Some(parse(key, value)?),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "newton_tolerance" => self.newton_tolerance = parse(key, value)?,
            "max_newton_iterations" => self.max_newton_iterations = parse(key, value)?,
            _ => return Err(Error::invalid(format!("unknown option '{key}'"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn problem(&self) -> Result<MultisymplecticProblem> {
        problem_by_label(&self.problem).ok_or_else(|| Error::invalid(format!("unknown problem '{}'", self.problem)))
    }

    /// `(Δt, Δx)` of refinement level `i`: `2^{-i}` for the wave problems, and
    /// `(0.2, 0.8)·2^{-i}` for the Schrödinger problem.
    pub fn level_steps(&self, i: i32) -> (f64, f64) {
        let h = 2f64.powi(-i);
        match self.problem.as_str() {
            "nls" => (0.2 * h, 0.8 * h),
            _ => (h, h),
        }
    }

    fn default_steps(&self) -> (f64, f64, f64) {
        match self.problem.as_str() {
            "nonlinear-wave" => (0.1, 0.05, 10.0),
            "nls" => (0.1, 0.4, 2.0 * std::f64::consts::PI),
            _ => (0.0625, 0.0625, 1.0),
        }
    }

    /// Solver settings for `run`.
    pub fn solver_config(&self) -> Result<SolverConfig> {
        let (mut dt, mut dx, t) = self.default_steps();
        if let Some(i) = self.level {
            (dt, dx) = self.level_steps(i);
        }
        let cfg = SolverConfig {
            newton_tolerance: self.newton_tolerance,
            max_newton_iterations: self.max_newton_iterations,
            q: self.q,
            p: self.p,
            dt: self.dt.unwrap_or(dt),
            dx: self.dx.unwrap_or(dx),
            t_final: self.t_final.unwrap_or(t),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Solver settings for refinement level `i` of `converge` (final time defaults to 1).
    pub fn level_config(&self, i: i32) -> Result<SolverConfig> {
        let (dt, dx) = self.level_steps(i);
        let cfg = SolverConfig {
            newton_tolerance: self.newton_tolerance,
            max_newton_iterations: self.max_newton_iterations,
            q: self.q,
            p: self.p,
            dt,
            dx,
            t_final: self.t_final.unwrap_or(1.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn create_out(dir: &Path, name: &str) -> Result<(PathBuf, csv::Writer<File>)> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(&path)?;
    Ok((path, w))
}

/// Outcome of `run`.
#[derive(Debug)]
pub struct RunReport {
    pub csv: PathBuf,
    pub series: InvariantSeries,
    pub slabs: usize,
    pub newton_iterations: usize,
}

pub fn invariants_header(problem: &MultisymplecticProblem) -> Vec<String> {
    let names = problem.component_names();
    let mut h = vec!["t".to_string()];
    h.extend(names.iter().map(|n| format!("mass_{n}")));
    h.push("momentum".into());
    h.push("energy".into());
    h.extend(names.iter().map(|n| format!("dev_mass_{n}")));
    h.push("dev_momentum".into());
    h.push("dev_energy".into());
    h
}

fn write_series(w: &mut csv::Writer<File>, s: &InvariantSeries) -> Result<()> {
    let d = s.mass.first().map_or(0, Vec::len);
    for n in 0..s.len() {
        let mut row = vec![num(s.times[n])];
        row.extend(s.mass[n].iter().map(|&m| num(m)));
        row.push(num(s.momentum[n]));
        row.push(num(s.energy[n]));
        row.extend((0..d).map(|c| num((s.mass[n][c] - s.mass[0][c]).abs())));
        row.push(num((s.momentum[n] - s.momentum[0]).abs()));
        row.push(num((s.energy[n] - s.energy[0]).abs()));
        w.write_record(&row)?;
    }
    Ok(())
}

/// Simulate and write the invariant series to `out/invariants.csv`. On a solver failure the
/// rows reached so far are written, followed by a row of `NaN` at the failing slab's end
/// time, and the failure is returned.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunReport> {
    let problem = cfg.problem()?;
    let solver = cfg.solver_config()?;
    let disc = Discretisation::new(problem, cfg.variant, &solver)?;
    let times = solver.time_nodes();
    let outcome = disc.run_from(disc.initial_state()?, &times);
    let (path, mut w) = create_out(&cfg.out, INVARIANTS_FILE)?;
    w.write_record(invariants_header(disc.problem()))?;
    let series = global_invariants(&disc, &outcome.trajectory);
    write_series(&mut w, &series)?;
    if let Some(err) = outcome.failure {
        let t_fail = times.get(outcome.trajectory.slabs.len() + 1).copied().unwrap_or(f64::NAN);
        let mut row = vec![num(t_fail)];
        row.extend(std::iter::repeat_n(num(f64::NAN), 2 * disc.dim() + 4));
        w.write_record(&row)?;
        w.flush()?;
        return Err(err);
    }
    w.flush()?;
    let iterations = outcome.trajectory.slabs.iter().map(|s| s.iterations).sum();
    Ok(RunReport { csv: path, slabs: outcome.trajectory.slabs.len(), series, newton_iterations: iterations })
}

/// Outcome of `converge`.
#[derive(Debug)]
pub struct ConvergeReport {
    pub csv: PathBuf,
    pub levels: Vec<i32>,
    pub record: ConvergenceRecord,
}

/// Bochner errors at the final time for one refinement level.
pub fn level_errors(cfg: &RunConfig, i: i32) -> Result<Vec<f64>> {
    let solver = cfg.level_config(i)?;
    let disc = Discretisation::new(cfg.problem()?, cfg.variant, &solver)?;
    let out = disc.run(&solver)?;
    if let Some(e) = out.failure {
        return Err(e);
    }
    Ok(bochner_error(&disc, &out.trajectory)?.pop().expect("at least the initial entry"))
}

/// Refinement study over levels `i_min..=i_max`, levels computed concurrently; writes
/// `out/convergence.csv` with one row per level.
pub fn cmd_converge(cfg: &RunConfig) -> Result<ConvergeReport> {
    let problem = cfg.problem()?;
    if problem.exact_solution().is_none() {
        return Err(Error::invalid(format!("problem '{}' has no exact solution to converge to", problem.label())));
    }
    if cfg.i_min > cfg.i_max {
        return Err(Error::invalid(format!("imin = {} exceeds imax = {}", cfg.i_min, cfg.i_max)));
    }
    let levels: Vec<i32> = (cfg.i_min..=cfg.i_max).collect();
    for &i in &levels {
        let solver = cfg.level_config(i)?;
        Discretisation::new(problem.clone(), cfg.variant, &solver)?;
    }
    let results: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = levels.iter().map(|&i| scope.spawn(move || level_errors(cfg, i))).collect();
        handles.into_iter().map(|h| h.join().expect("level thread panicked")).collect()
    });
    let names = problem.component_names();
    let (path, mut w) = create_out(&cfg.out, CONVERGENCE_FILE)?;
    let mut header = vec!["i".to_string(), "h".to_string()];
    header.extend(names.iter().map(|n| format!("e_{n}")));
    header.extend(names.iter().map(|n| format!("eoc_{n}")));
    w.write_record(&header)?;
    let d = names.len();
    let mut hs = Vec::new();
    let mut errors = Vec::new();
    let mut failure = None;
    for (&i, r) in levels.iter().zip(results) {
        match r {
            Ok(e) => {
                hs.push(cfg.level_steps(i).1);
                errors.push(e);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let record = if errors.is_empty() {
        ConvergenceRecord { h: vec![], errors: vec![], eoc: vec![] }
    } else {
        ConvergenceRecord::new(hs.clone(), errors.clone())?
    };
    for (k, e) in errors.iter().enumerate() {
        let mut row = vec![levels[k].to_string(), num(hs[k])];
        row.extend(e.iter().map(|&v| num(v)));
        let eoc_row = if k == 0 { vec![f64::NAN; d] } else { record.eoc[k - 1].clone() };
        row.extend(eoc_row.iter().map(|&v| num(v)));
        w.write_record(&row)?;
    }
    if let Some(err) = failure {
        let k = errors.len();
        let mut row = vec![levels[k].to_string(), num(cfg.level_steps(levels[k]).1)];
        row.extend(std::iter::repeat_n(num(f64::NAN), 2 * d));
        w.write_record(&row)?;
        w.flush()?;
        return Err(err);
    }
    w.flush()?;
    Ok(ConvergeReport { csv: path, levels, record })
}

/// Result of `verify`: one check per property group.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn check(name: &str, max_residual: f64, tolerance: f64) -> Check {
    Check { name: name.into(), max_residual, tolerance }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Largest relative difference between the assembled slab Jacobian and central differences
/// of the residual at a random slab state.
pub fn jacobian_fd_error(disc: &Discretisation, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = disc.dim();
    let slab = TemporalSlab::new(0.2, 0.3, disc.q())?;
    let mut field = |ns: usize| {
        let mut z = SlabCoefficients::zeros(d, ns, disc.q());
        for v in z.values_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        z
    };
    let z = field(disc.space().dof_count());
    let aux = disc.aux_space().map(|s| field(s.dof_count()));
    let jac = disc.assemble_jacobian(&slab, &z, aux.as_ref())?.to_dense();
    let x = disc.pack(&z, aux.as_ref());
    let (z0, a0) = (z.initial_state(), aux.as_ref().map(|a| a.initial_state()));
    let h = 1e-6;
    let scale = jac.amax().max(1e-300);
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let (zp, ap) = disc.unpack(&xp, &z0, a0.as_deref());
        let (zm, am) = disc.unpack(&xm, &z0, a0.as_deref());
        let rp = disc.assemble_residual(&slab, &zp, ap.as_ref())?;
        let rm = disc.assemble_residual(&slab, &zm, am.as_ref())?;
        for i in 0..x.len() {
            worst = worst.max(((rp[i] - rm[i]) / (2.0 * h) - jac[(i, j)]).abs() / scale);
        }
    }
    Ok(worst)
}

/// Run every property group; with `inject_fault` the G identities are evaluated with a
/// sign-flipped jump term, which must make the skew-symmetry group fail.
pub fn cmd_verify(seed: u64, inject_fault: bool) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    // quadrature: exact for monomials up to degree 2n-1
    let mut worst = 0.0f64;
    for n in 1..=9 {
        let rule = gauss_legendre(n)?;
        for k in 0..2 * n {
            let v: f64 = rule.iter().map(|(x, w)| w * x.powi(k as i32)).sum();
            worst = worst.max((v - 1.0 / (k as f64 + 1.0)).abs());
        }
    }
    checks.push(check("quadrature-exactness", worst, 1e-14));

    // Lagrange bases: partition of unity and nodal interpolation
    let mut worst = 0.0f64;
    for r in 0..=4 {
        let b = LagrangeBasis::equispaced(r);
        for _ in 0..20 {
            let x: f64 = rng.random_range(0.0..1.0);
            worst = worst.max((b.values(x).iter().sum::<f64>() - 1.0).abs());
            worst = worst.max(b.derivatives(x).iter().sum::<f64>().abs());
        }
        for (i, &xi) in b.nodes().iter().enumerate() {
            for (j, v) in b.values(xi).iter().enumerate() {
                worst = worst.max((v - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    checks.push(check("lagrange-basis", worst, 1e-12));

    // mass matrices: symmetric, and the banded solve agrees with a dense solve
    let mut worst = 0.0f64;
    for continuity in [Continuity::Continuous, Continuity::Discontinuous] {
        for p in 1..=3 {
            let s = SpatialSpace::new(uniform_partition(1.0, 8, true)?, p, continuity)?;
            let m = s.mass_matrix();
            worst = worst.max((&m - m.transpose()).amax());
            let b = random_vec(&mut rng, s.dof_count());
            let mut x = b.clone();
            s.solve_mass(&mut x);
            let r = &m * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(b);
            worst = worst.max(r.amax());
        }
    }
    checks.push(check("mass-matrix", worst, 1e-12));

    // L2 projection reproduces members of the space
    let mut worst = 0.0f64;
    for continuity in [Continuity::Continuous, Continuity::Discontinuous] {
        for p in 1..=3 {
            let s = SpatialSpace::new(uniform_partition(2.0, 6, true)?, p, continuity)?;
            let u = random_vec(&mut rng, s.dof_count());
            let rule = gauss_legendre(p + 1)?;
            let pu = s.l2_project_with(1, &rule, |e, xi, out| out[0] = s.eval_local(&u, e, xi));
            worst = worst.max(max_abs_diff(&u, &pu));
        }
    }
    checks.push(check("l2-projection", worst, 1e-12));

    // banded LU against dense LU
    let n = 40;
    let (kl, ku) = (3, 5);
    let mut band = BandMatrix::zeros(n, kl, ku);
    for i in 0..n {
        for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
            band.add(i, j, rng.random_range(-1.0..1.0) + if i == j { 4.0 } else { 0.0 });
        }
    }
    let b = random_vec(&mut rng, n);
    let dense = band.to_dense();
    let x_band = band.factor()?.solve(&b);
    let x_dense = dense.lu().solve(&nalgebra::DVector::from_vec(b)).ok_or_else(|| Error::Singular("dense reference".into()))?;
    checks.push(check("banded-lu", max_abs_diff(&x_band, x_dense.as_slice()), 1e-10));

    // G identities on random fields
    let mut res = [0.0f64; 4];
    for m in [4usize, 8] {
        for p in 1..=3 {
            let s = SpatialSpace::new(uniform_partition(1.0, m, true)?, p, Continuity::Discontinuous)?;
            let g = if inject_fault { GOperator::with_flipped_jump(&s)? } else { GOperator::new(&s)? };
            for _ in 0..10 {
                let u = random_vec(&mut rng, s.dof_count());
                let v = random_vec(&mut rng, s.dof_count());
                let r = g_identity_residuals(&g, &u, &v)?;
                res[0] = res[0].max(r.orthogonality);
                res[1] = res[1].max(r.skew);
                res[2] = res[2].max(r.product);
                res[3] = res[3].max(r.local_orthogonality.max(r.local_skew).max(r.local_product));
            }
        }
    }
    checks.push(check("g-orthogonality", res[0], 1e-12));
    checks.push(check("g-skew-symmetry", res[1], 1e-12));
    checks.push(check("g-product-rule", res[2], 1e-12));
    checks.push(check("g-local-identities", res[3], 1e-12));

    // problem structure, derivatives of S and exact solutions
    let mut skew = 0.0f64;
    let mut deriv = 0.0f64;
    let mut exact = 0.0f64;
    for problem in [linear_wave(), nonlinear_wave(), nls()] {
        let report = validate(&problem, seed);
        for c in &report.checks {
            match c.name.as_str() {
                "k-skew" | "l-skew" | "hessian-symmetry" => skew = skew.max(c.max_residual),
                "gradient" | "hessian" => deriv = deriv.max(c.max_residual),
                "exact-solution" => exact = exact.max(c.max_residual),
                _ => {}
            }
        }
    }
    checks.push(check("structure-symmetry", skew, 0.0));
    checks.push(check("hamiltonian-derivatives", deriv, 1e-6));
    checks.push(check("exact-solutions", exact, 1e-8));

    // slab Jacobians against finite differences
    let mut worst = 0.0f64;
    for variant in SchemeVariant::ALL {
        for problem in [nonlinear_wave(), nls()] {
            let dx = problem.domain_length() / 4.0;
            let cfg = SolverConfig { q: 1, p: 2, dx, ..SolverConfig::default() };
            let disc = Discretisation::new(problem, variant, &cfg)?;
            worst = worst.max(jacobian_fd_error(&disc, seed)?);
        }
    }
    checks.push(check("slab-jacobian", worst, 1e-5));

    // steady states over 100 slabs
    let mut worst = 0.0f64;
    for variant in SchemeVariant::ALL {
        let problem = linear_wave().with_initial(std::sync::Arc::new(|_| vec![0.4, 0.0, 0.0]));
        let cfg = SolverConfig { q: 1, p: 2, dt: 0.05, dx: 0.125, t_final: 5.0, ..SolverConfig::default() };
        let disc = Discretisation::new(problem, variant, &cfg)?;
        let init = disc.initial_state()?;
        let out = disc.run(&cfg)?;
        if let Some(e) = out.failure {
            return Err(e);
        }
        worst = worst.max(max_abs_diff(&init, &out.trajectory.final_state()));
    }
    checks.push(check("steady-states", worst, 1e-12));

    // linear wave: momentum and energy conserved by every variant
    let mut worst = 0.0f64;
    for variant in SchemeVariant::ALL {
        let cfg = SolverConfig { q: 1, p: 2, dt: 0.125, dx: 0.125, t_final: 1.0, ..SolverConfig::default() };
        let disc = Discretisation::new(linear_wave(), variant, &cfg)?;
        let out = disc.run(&cfg)?;
        let s = global_invariants(&disc, &out.trajectory);
        worst = worst.max(s.max_dev_energy()).max(s.max_dev_momentum());
    }
    checks.push(check("linear-conservation", worst, 1e-10));

    // element-local laws of the discontinuous scheme
    let problem = nls().with_initial(std::sync::Arc::new(|x| nls_soliton(0.0, x - 0.3)));
    let cfg = SolverConfig { q: 1, p: 2, dt: 0.1, dx: 0.8, t_final: 0.2, ..SolverConfig::default() };
    let disc = Discretisation::new(problem, SchemeVariant::DgPrimary, &cfg)?;
    let out = disc.run(&cfg)?;
    let mut worst = 0.0f64;
    for rec in &out.trajectory.slabs {
        for l in all_local_conservation_residuals(&disc, rec)? {
            worst = worst.max(l.energy_residual.abs()).max(l.momentum_residual.abs());
        }
    }
    checks.push(check("dg-local-laws", worst, 1e-10));

    Ok(VerifyReport { checks })
}
