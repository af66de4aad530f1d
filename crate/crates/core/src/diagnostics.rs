//! Conserved quantities, discrete conservation laws, error norms and convergence orders.

use crate::error::{Error, Result};
use crate::problem::MultisymplecticProblem;
use crate::quadrature::{gauss_legendre, MAX_GAUSS_POINTS};
use crate::solver::{Discretisation, SchemeVariant, SlabRecord, Trajectory};
use crate::space::{l2_project_spacetime_with, TestCoefficients};

/// Momentum and energy densities and fluxes at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Densities {
    /// `½ DZ · K Z`
    pub momentum_density: f64,
    /// `½ Z · K Z_t − S(Z)`
    pub momentum_flux: f64,
    /// `½ Z · L DZ − S(Z)`
    pub energy_density: f64,
    /// `½ Z_t · L Z`
    pub energy_flux: f64,
}

impl Densities {
    pub fn new(problem: &MultisymplecticProblem, z: &[f64], zt: &[f64], dz: &[f64]) -> Self {
        let (k, l) = (problem.k(), problem.l());
        let s = problem.s(z);
        Self {
            momentum_density: 0.5 * MultisymplecticProblem::form(k, dz, z),
            momentum_flux: 0.5 * MultisymplecticProblem::form(k, z, zt) - s,
            energy_density: 0.5 * MultisymplecticProblem::form(l, z, dz) - s,
            energy_flux: 0.5 * MultisymplecticProblem::form(l, zt, z),
        }
    }
}

/// Evaluates `Z`, `Z_t` and the discrete derivative `DZ` (`Z_x` or `G(Z)`) on a slab.
struct SlabView<'a> {
    disc: &'a Discretisation,
    rec: &'a SlabRecord,
}

/// Spatial coefficients of `Z`, `Z_t` and `DZ` at one reference time.
struct TimeSlice {
    z: Vec<f64>,
    zt: Vec<f64>,
    /// `G(Z)` for the discontinuous scheme; `None` means use the broken derivative.
    gz: Option<Vec<f64>>,
}

impl<'a> SlabView<'a> {
    fn slice(&self, tau: f64) -> TimeSlice {
        let trial = self.rec.slab.trial();
        let z = self.rec.z.state_at(trial, tau);
        let zt = self.rec.z.rate_at(trial, tau, self.rec.slab.dt());
        let gz = self.disc.g_operator().map(|g| g.apply_components(&z));
        TimeSlice { z, zt, gz }
    }
}

fn state_slice(disc: &Discretisation, state: &[f64]) -> TimeSlice {
    TimeSlice {
        z: state.to_vec(),
        zt: vec![0.0; state.len()],
        gz: disc.g_operator().map(|g| g.apply_components(state)),
    }
}

/// Values of `Z`, `Z_t`, `DZ` on element `e` at reference coordinate `xi`.
fn point_values(disc: &Discretisation, sl: &TimeSlice, e: usize, xi: f64, z: &mut [f64], zt: &mut [f64], dz: &mut [f64]) {
    let space = disc.space();
    let ns = space.dof_count();
    for c in 0..disc.dim() {
        let r = c * ns..(c + 1) * ns;
        z[c] = space.eval_local(&sl.z[r.clone()], e, xi);
        zt[c] = space.eval_local(&sl.zt[r.clone()], e, xi);
        dz[c] = match &sl.gz {
            Some(g) => space.eval_local(&g[r], e, xi),
            None => space.eval_local_derivative(&sl.z[r], e, xi),
        };
    }
}

/// Densities and fluxes of a solved slab at physical `(t, x)`.
pub fn densities_fluxes(disc: &Discretisation, rec: &SlabRecord, t: f64, x: f64) -> Result<Densities> {
    let tau = rec.slab.reference(t)?;
    let (e, xi) = disc.space().partition().locate(x)?;
    let view = SlabView { disc, rec };
    let sl = view.slice(tau);
    let d = disc.dim();
    let (mut z, mut zt, mut dz) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    point_values(disc, &sl, e, xi, &mut z, &mut zt, &mut dz);
    Ok(Densities::new(disc.problem(), &z, &zt, &dz))
}

/// Integrals over element `e` of mass (per component), momentum density and energy density.
fn element_quantities(disc: &Discretisation, sl: &TimeSlice, e: usize, mass: &mut [f64]) -> (f64, f64) {
    let d = disc.dim();
    let h = disc.space().partition().element_length(e);
    let (mut z, mut zt, mut dz) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let (mut mom, mut en) = (0.0, 0.0);
    for (xi, w) in disc.rule_x().iter() {
        point_values(disc, sl, e, xi, &mut z, &mut zt, &mut dz);
        let dens = Densities::new(disc.problem(), &z, &zt, &dz);
        for c in 0..d {
            mass[c] += h * w * z[c];
        }
        mom += h * w * dens.momentum_density;
        en += h * w * dens.energy_density;
    }
    (mom, en)
}

/// Global mass (per component), momentum and energy of a spatial state.
pub fn state_invariants(disc: &Discretisation, state: &[f64]) -> (Vec<f64>, f64, f64) {
    let sl = state_slice(disc, state);
    let mut mass = vec![0.0; disc.dim()];
    let (mut mom, mut en) = (0.0, 0.0);
    for e in 0..disc.space().element_count() {
        let (m, en_e) = element_quantities(disc, &sl, e, &mut mass);
        mom += m;
        en += en_e;
    }
    (mass, mom, en)
}

/// Global invariants at each temporal node.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSeries {
    pub times: Vec<f64>,
    /// `mass[n][c]`
    pub mass: Vec<Vec<f64>>,
    pub momentum: Vec<f64>,
    pub energy: Vec<f64>,
}

impl InvariantSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dev_momentum(&self) -> Vec<f64> {
        deviations(&self.momentum)
    }

    pub fn dev_energy(&self) -> Vec<f64> {
        deviations(&self.energy)
    }

    pub fn dev_mass(&self, c: usize) -> Vec<f64> {
        deviations(&self.mass.iter().map(|m| m[c]).collect::<Vec<_>>())
    }

    pub fn max_dev_momentum(&self) -> f64 {
        max_of(&self.dev_momentum())
    }

    pub fn max_dev_energy(&self) -> f64 {
        max_of(&self.dev_energy())
    }

    pub fn max_dev_mass(&self, c: usize) -> f64 {
        max_of(&self.dev_mass(c))
    }
}

fn deviations(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x - v[0]).abs()).collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b))
}

pub fn global_invariants(disc: &Discretisation, trajectory: &Trajectory) -> InvariantSeries {
    let states = trajectory.node_states();
    let mut out = InvariantSeries { times: trajectory.times(), mass: Vec::new(), momentum: Vec::new(), energy: Vec::new() };
    for s in &states {
        let (m, p, e) = state_invariants(disc, s);
        out.mass.push(m);
        out.momentum.push(p);
        out.energy.push(e);
    }
    out
}

/// Projection of `DZ` into the scheme's space-time test space.
fn projected_derivative(disc: &Discretisation, rec: &SlabRecord) -> TestCoefficients {
    let d = disc.dim();
    let space = disc.space();
    let ns = space.dof_count();
    let view = SlabView { disc, rec };
    let mut cache: Option<(f64, TimeSlice)> = None;
    l2_project_spacetime_with(space, &rec.slab, d, disc.rule_t(), disc.rule_x(), |tau, e, xi, out| {
        if cache.as_ref().map(|c| c.0) != Some(tau) {
            cache = Some((tau, view.slice(tau)));
        }
        let sl = &cache.as_ref().expect("just filled").1;
        for (c, o) in out.iter_mut().enumerate() {
            let r = c * ns..(c + 1) * ns;
            *o = match &sl.gz {
                Some(g) => space.eval_local(&g[r], e, xi),
                None => space.eval_local_derivative(&sl.z[r], e, xi),
            };
        }
    })
}

/// `∫∫ W` over element `e` (or all elements) of a slab, `W = N · P(DZ)` with `N` the
/// nonlinearity used by the scheme.
fn w_integral(disc: &Discretisation, rec: &SlabRecord, pdz: &TestCoefficients, element: Option<usize>) -> f64 {
    let d = disc.dim();
    let space = disc.space();
    let ns = space.dof_count();
    let view = SlabView { disc, rec };
    let elements: Vec<usize> = match element {
        Some(e) => vec![e],
        None => (0..space.element_count()).collect(),
    };
    let (mut z, mut zt, mut dz) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut grad = vec![0.0; d];
    let mut total = 0.0;
    for (tau, wt) in disc.rule_t().iter() {
        let sl = view.slice(tau);
        let pst = pdz.state_at(rec.slab.test(), tau);
        let aux = rec.aux.as_ref().map(|a| a.state_at(rec.slab.trial(), tau));
        for &e in &elements {
            let h = space.partition().element_length(e);
            for (xi, wx) in disc.rule_x().iter() {
                point_values(disc, &sl, e, xi, &mut z, &mut zt, &mut dz);
                match &aux {
                    Some(a) => {
                        let aux_space = disc.aux_space().expect("auxiliary field has a space");
                        let na = aux_space.dof_count();
                        for (c, g) in grad.iter_mut().enumerate() {
                            *g = aux_space.eval_local(&a[c * na..(c + 1) * na], e, xi);
                        }
                    }
                    None => disc.problem().hamiltonian().gradient(&z, &mut grad),
                }
                let w: f64 = (0..d).map(|c| grad[c] * space.eval_local(&pst[c * ns..(c + 1) * ns], e, xi)).sum();
                total += rec.slab.dt() * wt * h * wx * w;
            }
        }
    }
    total
}

/// Changes over one slab and the residuals of its discrete conservation laws.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabLaws {
    pub delta_mass: Vec<f64>,
    pub delta_momentum: f64,
    pub delta_energy: f64,
    /// `∫∫ W` over the slab.
    pub w_integral: f64,
    /// `ΔM − ∫∫ W`: the consistent momentum law.
    pub momentum_residual: f64,
    /// Energy law residual: `ΔE` (the periodic flux term vanishes), or for the momentum
    /// variant the consistent law `Δ∫(ℰ + S) − ∫∫ N · Z_t`.
    pub energy_residual: f64,
}

pub fn slab_conservation_residuals(disc: &Discretisation, rec: &SlabRecord) -> SlabLaws {
    let (z0, z1) = (rec.z.initial_state(), rec.z.final_state());
    let (m0, p0, e0) = state_invariants(disc, &z0);
    let (m1, p1, e1) = state_invariants(disc, &z1);
    let pdz = projected_derivative(disc, rec);
    let w = w_integral(disc, rec, &pdz, None);
    let energy_residual = match rec.aux {
        Some(_) => (e1 + hamiltonian_integral(disc, &z1)) - (e0 + hamiltonian_integral(disc, &z0)) - aux_power(disc, rec),
        None => e1 - e0,
    };
    SlabLaws {
        delta_mass: m1.iter().zip(&m0).map(|(a, b)| a - b).collect(),
        delta_momentum: p1 - p0,
        delta_energy: e1 - e0,
        w_integral: w,
        momentum_residual: (p1 - p0) - w,
        energy_residual,
    }
}

/// `∫ S(Z) dx` of a spatial state.
fn hamiltonian_integral(disc: &Discretisation, state: &[f64]) -> f64 {
    let space = disc.space();
    let ns = space.dof_count();
    let mut z = vec![0.0; disc.dim()];
    let mut total = 0.0;
    for e in 0..space.element_count() {
        let h = space.partition().element_length(e);
        for (xi, w) in disc.rule_x().iter() {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc = space.eval_local(&state[c * ns..(c + 1) * ns], e, xi);
            }
            total += h * w * disc.problem().s(&z);
        }
    }
    total
}

/// `∫∫ N · Z_t` over a momentum-variant slab.
fn aux_power(disc: &Discretisation, rec: &SlabRecord) -> f64 {
    let (Some(aux), Some(aux_space)) = (rec.aux.as_ref(), disc.aux_space()) else {
        return 0.0;
    };
    let space = disc.space();
    let (ns, na) = (space.dof_count(), aux_space.dof_count());
    let mut total = 0.0;
    for (tau, wt) in disc.rule_t().iter() {
        let zt = rec.z.rate_at(rec.slab.trial(), tau, rec.slab.dt());
        let n = aux.state_at(rec.slab.trial(), tau);
        for e in 0..space.element_count() {
            let h = space.partition().element_length(e);
            for (xi, wx) in disc.rule_x().iter() {
                let v: f64 = (0..disc.dim())
                    .map(|c| aux_space.eval_local(&n[c * na..(c + 1) * na], e, xi) * space.eval_local(&zt[c * ns..(c + 1) * ns], e, xi))
                    .sum();
                total += rec.slab.dt() * wt * h * wx * v;
            }
        }
    }
    total
}

/// Element-local law residuals of the discontinuous scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementLaws {
    pub momentum_residual: f64,
    pub energy_residual: f64,
}

/// Local momentum and energy law residuals on element `m` of a discontinuous slab,
/// including the interface flux terms at both element ends.
pub fn local_conservation_residuals(disc: &Discretisation, rec: &SlabRecord, m: usize) -> Result<ElementLaws> {
    if disc.variant() != SchemeVariant::DgPrimary {
        return Err(Error::invalid("element-local laws hold for the discontinuous scheme only"));
    }
    let pdz = projected_derivative(disc, rec);
    Ok(element_laws(disc, rec, &pdz, m))
}

/// Residuals on every element of a discontinuous slab.
pub fn all_local_conservation_residuals(disc: &Discretisation, rec: &SlabRecord) -> Result<Vec<ElementLaws>> {
    if disc.variant() != SchemeVariant::DgPrimary {
        return Err(Error::invalid("element-local laws hold for the discontinuous scheme only"));
    }
    let pdz = projected_derivative(disc, rec);
    Ok((0..disc.space().element_count()).map(|m| element_laws(disc, rec, &pdz, m)).collect())
}

fn element_laws(disc: &Discretisation, rec: &SlabRecord, pdz: &TestCoefficients, m: usize) -> ElementLaws {
    let d = disc.dim();
    let space = disc.space();
    let me = space.element_count();
    let ns = space.dof_count();
    let (k, l) = (disc.problem().k(), disc.problem().l());
    let mut mass = vec![0.0; d];
    let s0 = state_slice(disc, &rec.z.initial_state());
    let s1 = state_slice(disc, &rec.z.final_state());
    let (g0, e0) = element_quantities(disc, &s0, m, &mut mass);
    let (g1, e1) = element_quantities(disc, &s1, m, &mut mass);
    let w = w_integral(disc, rec, pdz, Some(m));
    // interface fluxes at nodes m and m+1
    let trace = |v: &[f64], node: usize| -> (Vec<f64>, Vec<f64>) {
        let left = (node + me - 1) % me;
        let right = node % me;
        let minus = (0..d).map(|c| space.eval_local(&v[c * ns..(c + 1) * ns], left, 1.0)).collect();
        let plus = (0..d).map(|c| space.eval_local(&v[c * ns..(c + 1) * ns], right, 0.0)).collect();
        (minus, plus)
    };
    let (mut fe, mut fm) = (0.0, 0.0);
    for (tau, wt) in disc.rule_t().iter() {
        let z = rec.z.state_at(rec.slab.trial(), tau);
        let zt = rec.z.rate_at(rec.slab.trial(), tau, rec.slab.dt());
        for (node, sign) in [(m + 1, 1.0), (m, -1.0)] {
            let (zm, zp) = trace(&z, node);
            let (ztm, ztp) = trace(&zt, node);
            let energy_flux = 0.25 * (MultisymplecticProblem::form(l, &ztm, &zp) + MultisymplecticProblem::form(l, &ztp, &zm));
            let momentum_flux = 0.25 * (MultisymplecticProblem::form(k, &zp, &ztm) + MultisymplecticProblem::form(k, &zm, &ztp));
            fe += sign * rec.slab.dt() * wt * energy_flux;
            fm += sign * rec.slab.dt() * wt * momentum_flux;
        }
    }
    ElementLaws { momentum_residual: (g1 - g0) - w + fm, energy_residual: (e1 - e0) + fe }
}

/// Space-time L2 error up to each temporal node, per component:
/// `√(∫_0^{t_n} ∫ |Z − z|² dx dt)`, with the capped Gauss rule in both directions.
pub fn bochner_error(disc: &Discretisation, trajectory: &Trajectory) -> Result<Vec<Vec<f64>>> {
    let exact = disc
        .problem()
        .exact_solution()
        .ok_or_else(|| Error::invalid(format!("problem '{}' has no exact solution", disc.problem().label())))?
        .clone();
    let d = disc.dim();
    let space = disc.space();
    let ns = space.dof_count();
    let rule = gauss_legendre(MAX_GAUSS_POINTS)?;
    let tab: Vec<Vec<f64>> = rule.points().iter().map(|&x| space.basis().values(x)).collect();
    let mut acc = vec![0.0; d];
    let mut out = vec![vec![0.0; d]];
    for rec in &trajectory.slabs {
        for (tau, wt) in rule.iter() {
            let t = rec.slab.time_at(tau);
            let st = rec.z.state_at(rec.slab.trial(), tau);
            for e in 0..space.element_count() {
                let h = space.partition().element_length(e);
                let x0 = space.partition().element_start(e);
                for (i, (xi, wx)) in rule.iter().enumerate() {
                    let ex = exact(t, x0 + xi * h);
                    for c in 0..d {
                        let v: f64 = (0..space.local_dim()).map(|a| st[c * ns + space.dof(e, a)] * tab[i][a]).sum();
                        acc[c] += rec.slab.dt() * wt * h * wx * (v - ex[c]).powi(2);
                    }
                }
            }
        }
        out.push(acc.iter().map(|v| v.sqrt()).collect());
    }
    Ok(out)
}

/// Errors and convergence orders of a refinement study.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub h: Vec<f64>,
    /// `errors[i][c]`
    pub errors: Vec<Vec<f64>>,
    /// `eoc[i][c]`, one row fewer than `errors`.
    pub eoc: Vec<Vec<f64>>,
}

impl ConvergenceRecord {
    pub fn new(h: Vec<f64>, errors: Vec<Vec<f64>>) -> Result<Self> {
        if errors.len() != h.len() || errors.is_empty() {
            return Err(Error::invalid("one error row per mesh size is needed"));
        }
        let d = errors[0].len();
        if errors.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("error rows differ in length"));
        }
        let mut eoc_rows = vec![vec![f64::NAN; d]; h.len().saturating_sub(1)];
        if h.len() >= 2 {
            for c in 0..d {
                let col: Vec<f64> = errors.iter().map(|r| r[c]).collect();
                for (i, v) in eoc(&col, &h)?.into_iter().enumerate() {
                    eoc_rows[i][c] = v;
                }
            }
        }
        Ok(Self { h, errors, eoc: eoc_rows })
    }

    /// Errors of component `c` across levels.
    pub fn component_errors(&self, c: usize) -> Vec<f64> {
        self.errors.iter().map(|r| r[c]).collect()
    }

    pub fn component_eoc(&self, c: usize) -> Vec<f64> {
        self.eoc.iter().map(|r| r[c]).collect()
    }
}

/// Experimental orders `log(a_{i+1}/a_i) / log(h_{i+1}/h_i)`; `NaN` where undefined.
pub fn eoc(errors: &[f64], hs: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != hs.len() || errors.len() < 2 {
        return Err(Error::invalid("eoc needs equal-length sequences of at least two entries"));
    }
    if hs.iter().any(|&h| !(h > 0.0)) || hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("mesh sizes must be positive and strictly decreasing"));
    }
    Ok(errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(a, h)| {
            if a[0] > 0.0 && a[1] > 0.0 && a[0].is_finite() && a[1].is_finite() {
                (a[1] / a[0]).ln() / (h[1] / h[0]).ln()
            } else {
                f64::NAN
            }
        })
        .collect())
}

/// Largest gap, over every slab and every temporal Gauss point of the slab, between the
/// auxiliary derivative component and the spatial derivative of `u`: the spatial L2
/// projection of `u_x` (continuous scheme) or `G(u)` (discontinuous scheme).
///
/// Needs a wave problem with components `(u, v, w)`.
pub fn auxiliary_identity_gap(disc: &Discretisation, trajectory: &Trajectory) -> Result<f64> {
    if !disc.problem().kind().is_wave() {
        return Err(Error::invalid("the auxiliary identity concerns wave problems"));
    }
    let space = disc.space();
    let ns = space.dof_count();
    let gauss = gauss_legendre(disc.q() + 1)?;
    let mut worst = 0.0f64;
    for rec in &trajectory.slabs {
        for &tau in gauss.points() {
            let st = rec.z.state_at(rec.slab.trial(), tau);
            let u = &st[..ns];
            let w = &st[2 * ns..3 * ns];
            let du = match disc.g_operator() {
                Some(g) => g.apply(u),
                None => space.l2_project_with(1, disc.rule_x(), |e, xi, out| out[0] = space.eval_local_derivative(u, e, xi)),
            };
            let scale = du.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            worst = worst.max(w.iter().zip(&du).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale);
        }
    }
    Ok(worst)
}

/// Stability monitor for wave problems.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBound {
    /// `‖V‖² + ‖DU‖² + ∫V(U)` at each temporal node, with `DU` the spatial projection
    /// of `U_x` (continuous) or `G(U)` (discontinuous).
    pub monitored: Vec<f64>,
    /// `‖V(0)‖² + ‖U_x(0)‖² + 2∫V(U(0))` (with `G(U(0))` for the discontinuous scheme).
    pub bound: f64,
}

impl EnergyBound {
    /// Largest excess of the monitored quantity over the bound (negative when it holds).
    pub fn max_excess(&self) -> f64 {
        self.monitored.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v - self.bound))
    }
}

pub fn energy_bound(disc: &Discretisation, trajectory: &Trajectory) -> Result<EnergyBound> {
    if !disc.problem().kind().is_wave() {
        return Err(Error::invalid("the energy bound concerns wave problems"));
    }
    let space = disc.space();
    let ns = space.dof_count();
    let problem = disc.problem();
    let potential = |u: f64| problem.s(&[u, 0.0, 0.0]);
    let norm2 = |f: &dyn Fn(usize, f64) -> f64| -> f64 {
        let mut s = 0.0;
        for e in 0..space.element_count() {
            let h = space.partition().element_length(e);
            for (xi, w) in disc.rule_x().iter() {
                s += h * w * f(e, xi);
            }
        }
        s
    };
    let derivative = |u: &[f64]| -> Vec<f64> {
        match disc.g_operator() {
            Some(g) => g.apply(u),
            None => space.l2_project_with(1, disc.rule_x(), |e, xi, out| out[0] = space.eval_local_derivative(u, e, xi)),
        }
    };
    let quantity = |state: &[f64], twice: bool| -> f64 {
        let u = &state[..ns];
        let v = &state[ns..2 * ns];
        let du = derivative(u);
        let pot = norm2(&|e, xi| potential(space.eval_local(u, e, xi)));
        norm2(&|e, xi| space.eval_local(v, e, xi).powi(2))
            + norm2(&|e, xi| space.eval_local(&du, e, xi).powi(2))
            + if twice { 2.0 * pot } else { pot }
    };
    let init = &trajectory.initial;
    let u0 = &init[..ns];
    let v0 = &init[ns..2 * ns];
    let du0_sq = match disc.g_operator() {
        Some(g) => {
            let gu = g.apply(u0);
            norm2(&|e, xi| space.eval_local(&gu, e, xi).powi(2))
        }
        None => norm2(&|e, xi| space.eval_local_derivative(u0, e, xi).powi(2)),
    };
    let bound = norm2(&|e, xi| space.eval_local(v0, e, xi).powi(2))
        + du0_sq
        + 2.0 * norm2(&|e, xi| potential(space.eval_local(u0, e, xi)));
    let monitored = trajectory.node_states().iter().map(|s| quantity(s, false)).collect();
    Ok(EnergyBound { monitored, bound })
}

/// Conserved wave energy `‖V‖² + ‖DU‖² + 2∫V(U)` at each node (see [`energy_bound`]).
pub fn wave_energy_series(disc: &Discretisation, trajectory: &Trajectory) -> Result<Vec<f64>> {
    let eb = energy_bound(disc, trajectory)?;
    let space = disc.space();
    let ns = space.dof_count();
    let problem = disc.problem();
    Ok(trajectory
        .node_states()
        .iter()
        .zip(&eb.monitored)
        .map(|(s, m)| {
            let mut pot = 0.0;
            for e in 0..space.element_count() {
                let h = space.partition().element_length(e);
                for (xi, w) in disc.rule_x().iter() {
                    pot += h * w * problem.s(&[space.eval_local(&s[..ns], e, xi), 0.0, 0.0]);
                }
            }
            m + pot
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{linear_wave, nls, nonlinear_wave};
    use crate::solver::SolverConfig;
    use std::f64::consts::PI;

    fn config(q: usize, p: usize, dt: f64, dx: f64, t: f64) -> SolverConfig {
        SolverConfig { q, p, dt, dx, t_final: t, ..SolverConfig::default() }
    }

    fn constant_run(variant: SchemeVariant, slabs: usize) -> (Discretisation, Trajectory) {
        let cfg = config(1, 2, 0.1, 0.25, 0.1 * slabs as f64);
        let problem = linear_wave().with_initial(std::sync::Arc::new(|_| vec![0.7, 0.0, 0.0]));
        crate::solver::run_simulation(variant, problem, &cfg).unwrap()
    }

    #[test]
    fn densities_vanish_for_constant_state() {
        let p = linear_wave();
        let d = Densities::new(&p, &[0.3, 0.0, 0.0], &[0.0; 3], &[0.0; 3]);
        assert_eq!(d, Densities { momentum_density: 0.0, momentum_flux: 0.0, energy_density: 0.0, energy_flux: 0.0 });
    }

    #[test]
    fn skew_forms_agree_both_ways() {
        let p = nls();
        let z = [0.3, -1.2, 0.7, 2.1];
        let zt = [1.1, 0.4, -0.6, 0.25];
        let mut kz = [0.0; 4];
        let mut kzt = [0.0; 4];
        MultisymplecticProblem::apply(p.k(), &z, &mut kz);
        MultisymplecticProblem::apply(p.k(), &zt, &mut kzt);
        let a: f64 = 0.5 * zt.iter().zip(&kz).map(|(x, y)| x * y).sum::<f64>();
        let b: f64 = -0.5 * z.iter().zip(&kzt).map(|(x, y)| x * y).sum::<f64>();
        assert!((a - b).abs() <= 1e-14);
    }

    #[test]
    fn linear_wave_initial_energy() {
        // ∫ ½(u w_x − w u_x) − ½v² + ½w² with w = u_x integrates to −π²/2
        let disc = Discretisation::new(linear_wave(), SchemeVariant::CgPrimary, &config(1, 3, 0.1, 1.0 / 32.0, 1.0)).unwrap();
        let (_, _, e) = state_invariants(&disc, &disc.initial_state().unwrap());
        assert!((e + PI * PI / 2.0).abs() < 1e-6, "{e}");
        let disc = Discretisation::new(linear_wave(), SchemeVariant::DgPrimary, &config(1, 2, 0.1, 1.0 / 32.0, 1.0)).unwrap();
        let (_, _, e) = state_invariants(&disc, &disc.initial_state().unwrap());
        assert!((e + PI * PI / 2.0).abs() < 1e-4, "{e}");
    }

    #[test]
    fn point_densities_match_closed_form() {
        let (disc, tr) = crate::solver::run_simulation(SchemeVariant::CgPrimary, linear_wave(), &config(2, 3, 1.0 / 64.0, 1.0 / 64.0, 1.0 / 64.0)).unwrap();
        let (t, x) = (0.01, 0.37);
        let d = densities_fluxes(&disc, &tr.slabs[0], t, x).unwrap();
        let z = crate::problem::harmonic_wave(t, x);
        // exact: u_x = w, u_t = v, v_t = w_x = v_x
        let (u, v, w) = (z[0], z[1], z[2]);
        let vx = -2.0 * PI * PI * (2.0 * PI * (x + t)).sin();
        let s = 0.5 * v * v - 0.5 * w * w;
        let energy_density = 0.5 * (u * vx - w * w) - s;
        let energy_flux = 0.5 * (v * w - vx * u);
        assert!((d.energy_density - energy_density).abs() < 1e-3, "{} {}", d.energy_density, energy_density);
        assert!((d.energy_flux - energy_flux).abs() < 1e-3, "{} {}", d.energy_flux, energy_flux);
        assert!(densities_fluxes(&disc, &tr.slabs[0], 0.5, x).is_err());
    }

    #[test]
    fn constant_trajectory_has_constant_series() {
        for variant in SchemeVariant::ALL {
            let (disc, tr) = constant_run(variant, 5);
            let s = global_invariants(&disc, &tr);
            assert_eq!(s.len(), 6);
            assert!((s.mass[0][0] - 0.7).abs() < 1e-14);
            assert!(s.max_dev_mass(0) <= 1e-14 && s.max_dev_energy() <= 1e-14 && s.max_dev_momentum() <= 1e-14);
        }
    }

    #[test]
    fn nonlinear_wave_laws() {
        let (disc, tr) = crate::solver::run_simulation(SchemeVariant::CgPrimary, nonlinear_wave(), &config(1, 2, 0.1, 0.05, 1.0)).unwrap();
        let s = global_invariants(&disc, &tr);
        assert!(s.max_dev_energy() <= 1e-9);
        assert!(s.max_dev_momentum() > 1e-12, "plain momentum should drift");
        for rec in &tr.slabs {
            let laws = slab_conservation_residuals(&disc, rec);
            assert!(laws.energy_residual.abs() <= 1e-10, "{laws:?}");
            assert!(laws.momentum_residual.abs() <= 1e-10, "{laws:?}");
        }
        assert!(local_conservation_residuals(&disc, &tr.slabs[0], 0).is_err());
        assert!(auxiliary_identity_gap(&disc, &tr).unwrap() <= 1e-10);
        assert!(energy_bound(&disc, &tr).unwrap().max_excess() <= 1e-8);
        let we = wave_energy_series(&disc, &tr).unwrap();
        assert!(we.iter().all(|e| (e - we[0]).abs() <= 1e-9));
    }

    #[test]
    fn momentum_variant_consistent_energy_law() {
        let (disc, tr) = crate::solver::run_simulation(SchemeVariant::CgMomentum, nonlinear_wave(), &config(0, 1, 0.1, 0.05, 1.0)).unwrap();
        let s = global_invariants(&disc, &tr);
        assert!(s.max_dev_energy() > 1e-6);
        for rec in &tr.slabs {
            let laws = slab_conservation_residuals(&disc, rec);
            assert!(laws.energy_residual.abs() <= 1e-9, "{laws:?}");
            assert!(laws.momentum_residual.abs() <= 1e-10, "{laws:?}");
        }
    }

    #[test]
    fn dg_local_laws_on_nls() {
        let problem = nls().with_initial(std::sync::Arc::new(|x| crate::problem::nls_soliton(0.0, x - 0.3)));
        let (disc, tr) = crate::solver::run_simulation(SchemeVariant::DgPrimary, problem, &config(1, 2, 0.1, 0.8, 0.3)).unwrap();
        for rec in &tr.slabs {
            let locals = all_local_conservation_residuals(&disc, rec).unwrap();
            let worst = locals.iter().fold(0.0f64, |m, l| m.max(l.energy_residual.abs()).max(l.momentum_residual.abs()));
            assert!(worst <= 1e-10, "{worst}");
            let one = local_conservation_residuals(&disc, rec, 7).unwrap();
            assert_eq!(one, locals[7]);
            // the local laws sum to the global ones
            let g = slab_conservation_residuals(&disc, rec);
            let sum_e: f64 = locals.iter().map(|l| l.energy_residual).sum();
            assert!((sum_e - g.energy_residual).abs() <= 1e-10);
        }
    }

    #[test]
    fn dg_local_laws_see_broken_operator() {
        // laws computed with a flipped-sign G no longer close
        let cfg = config(0, 1, 0.1, 0.8, 0.1);
        let problem = nls().with_initial(std::sync::Arc::new(|x| crate::problem::nls_soliton(0.0, x - 0.3)));
        let (disc, tr) = crate::solver::run_simulation(SchemeVariant::DgPrimary, problem, &cfg).unwrap();
        let rec = &tr.slabs[0];
        let mut z = rec.z.clone();
        for v in z.values_mut().iter_mut().skip(7).step_by(11) {
            *v += 1e-3;
        }
        let perturbed = SlabRecord { z, ..rec.clone() };
        let worst = all_local_conservation_residuals(&disc, &perturbed)
            .unwrap()
            .iter()
            .fold(0.0f64, |m, l| m.max(l.energy_residual.abs()));
        assert!(worst > 1e-8, "{worst}");
    }

    #[test]
    fn bochner_error_properties() {
        // the exact solution is the travelling wave, not the constant: error is positive and grows
        let (disc, tr) = constant_run(SchemeVariant::CgPrimary, 3);
        let e = bochner_error(&disc, &tr).unwrap();
        assert_eq!(e.len(), 4);
        assert_eq!(e[0], vec![0.0; 3]);
        assert!(e.windows(2).all(|w| w[1][0] > w[0][0]));
        let no_exact = crate::problem::nonlinear_wave();
        let d2 = Discretisation::new(no_exact, SchemeVariant::CgPrimary, &config(0, 1, 0.1, 0.25, 0.1)).unwrap();
        assert!(bochner_error(&d2, &tr).is_err());
    }

    #[test]
    fn bochner_error_zero_for_exact_member() {
        let exact = |_: f64, _: f64| vec![0.7, 0.0, 0.0];
        let problem = MultisymplecticProblem::new(
            "steady",
            3,
            linear_wave().k().to_vec(),
            linear_wave().l().to_vec(),
            std::sync::Arc::new(crate::problem::WaveHamiltonian { quartic: 0.0 }),
            1.0,
            Some(std::sync::Arc::new(exact)),
        )
        .unwrap();
        let (disc, tr) = crate::solver::run_simulation(SchemeVariant::DgPrimary, problem, &config(1, 1, 0.25, 0.25, 1.0)).unwrap();
        let e = bochner_error(&disc, &tr).unwrap();
        assert!(e.iter().flatten().all(|&v| v <= 1e-13));
    }

    #[test]
    fn bochner_error_refines_at_expected_rate() {
        let run = |h: f64| {
            let (d, tr) = crate::solver::run_simulation(SchemeVariant::CgPrimary, linear_wave(), &config(1, 1, h, h, 1.0)).unwrap();
            bochner_error(&d, &tr).unwrap().last().unwrap()[0]
        };
        let (a, b) = (run(0.125), run(0.0625));
        let order = (b / a).ln() / 0.5f64.ln();
        assert!((1.9..2.5).contains(&order), "{order}");
    }

    #[test]
    fn eoc_examples() {
        assert!((eoc(&[1.0, 0.25], &[1.0, 0.5]).unwrap()[0] - 2.0).abs() < 1e-14);
        assert_eq!(eoc(&[1.0, 1.0], &[0.3, 0.1]).unwrap()[0], 0.0);
        assert!((eoc(&[1e-2, 1.25e-3], &[0.5, 0.25]).unwrap()[0] - 3.0).abs() < 1e-12);
        assert!(eoc(&[1.0, 0.0], &[1.0, 0.5]).unwrap()[0].is_nan());
        assert!(eoc(&[1.0], &[1.0]).is_err());
        assert!(eoc(&[1.0, 0.5], &[0.5, 1.0]).is_err());
        assert!(eoc(&[1.0, 0.5], &[1.0, 0.5, 0.25]).is_err());
    }

    #[test]
    fn convergence_record_shapes() {
        let r = ConvergenceRecord::new(vec![0.5, 0.25, 0.125], vec![vec![1.0, 2.0], vec![0.25, 1.0], vec![0.0625, 0.5]]).unwrap();
        assert_eq!(r.eoc.len(), 2);
        assert!((r.component_eoc(0)[1] - 2.0).abs() < 1e-12);
        assert!((r.component_eoc(1)[0] - 1.0).abs() < 1e-12);
        assert_eq!(r.component_errors(1), vec![2.0, 1.0, 0.5]);
        assert!(ConvergenceRecord::new(vec![0.5], vec![]).is_err());
    }
}
