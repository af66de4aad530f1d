//! Space-time slab assembly, Newton solves and time stepping.

use std::fmt;
use std::str::FromStr;

use crate::basis::Tabulation;
use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::mesh::uniform_partition;
use crate::operator::GOperator;
use crate::problem::MultisymplecticProblem;
use crate::quadrature::{policy_rule, QuadratureRule};
use crate::space::{Continuity, SlabCoefficients, SpatialSpace, TemporalSlab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeVariant {
    /// Continuous in space, `∇S(Z)` evaluated directly.
    CgPrimary,
    /// Continuous in space, `∇S(Z)` replaced by its projection into the trial space.
    CgMomentum,
    /// Discontinuous in space with the average-flux derivative `G`.
    DgPrimary,
}

impl SchemeVariant {
    pub const ALL: [SchemeVariant; 3] = [SchemeVariant::CgPrimary, SchemeVariant::CgMomentum, SchemeVariant::DgPrimary];

    pub fn continuity(self) -> Continuity {
        match self {
            SchemeVariant::DgPrimary => Continuity::Discontinuous,
            _ => Continuity::Continuous,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SchemeVariant::CgPrimary => "cg",
            SchemeVariant::CgMomentum => "cg-momentum",
            SchemeVariant::DgPrimary => "dg",
        }
    }

    /// Number of unknown fields per slab: the solution, plus the projected
    /// nonlinearity for the momentum variant.
    pub fn field_count(self) -> usize {
        match self {
            SchemeVariant::CgMomentum => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for SchemeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchemeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cg" => Ok(SchemeVariant::CgPrimary),
            "cg-momentum" => Ok(SchemeVariant::CgMomentum),
            "dg" => Ok(SchemeVariant::DgPrimary),
            _ => Err(Error::invalid(format!("unknown variant '{s}' (expected cg, cg-momentum or dg)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub newton_tolerance: f64,
    pub max_newton_iterations: usize,
    pub q: usize,
    pub p: usize,
    pub dt: f64,
    pub dx: f64,
    pub t_final: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { newton_tolerance: 1e-12, max_newton_iterations: 50, q: 1, p: 1, dt: 0.1, dx: 0.1, t_final: 1.0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tolerance > 0.0) {
            return Err(Error::invalid("newton tolerance must be positive"));
        }
        if self.max_newton_iterations == 0 {
            return Err(Error::invalid("need at least one Newton iteration"));
        }
        if self.p == 0 {
            return Err(Error::invalid("spatial degree p must be at least 1"));
        }
        for (name, v) in [("dt", self.dt), ("dx", self.dx), ("T", self.t_final)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Slab end points `t_0 = 0 < ... < t_N = T`; the last slab is shortened if needed.
    pub fn time_nodes(&self) -> Vec<f64> {
        let n = ((self.t_final / self.dt) - 1e-9).ceil().max(1.0) as usize;
        let mut t: Vec<f64> = (0..=n).map(|i| (i as f64 * self.dt).min(self.t_final)).collect();
        t[n] = self.t_final;
        t
    }
}

/// Everything fixed for a run: problem, variant, spaces, quadrature and tabulations.
#[derive(Clone)]
pub struct Discretisation {
    problem: MultisymplecticProblem,
    variant: SchemeVariant,
    space: SpatialSpace,
    /// Discontinuous space of the projected nonlinearity (momentum variant only).
    aux_space: Option<SpatialSpace>,
    q: usize,
    rule_x: QuadratureRule,
    rule_t: QuadratureRule,
    tab_x: Tabulation,
    tab_trial: Tabulation,
    tab_test: Tabulation,
    phi0: Vec<f64>,
    phi1: Vec<f64>,
    g: Option<GOperator>,
    newton_tolerance: f64,
    max_newton_iterations: usize,
}

impl fmt::Debug for Discretisation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Discretisation")
            .field("problem", &self.problem.label())
            .field("variant", &self.variant)
            .field("p", &self.space.degree())
            .field("q", &self.q)
            .field("elements", &self.space.element_count())
            .finish()
    }
}

/// One solved slab.
#[derive(Debug, Clone)]
pub struct SlabRecord {
    pub slab: TemporalSlab,
    pub z: SlabCoefficients,
    /// Projected nonlinearity (momentum variant only).
    pub aux: Option<SlabCoefficients>,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Projected initial data, component-major.
    pub initial: Vec<f64>,
    pub slabs: Vec<SlabRecord>,
}

impl Trajectory {
    /// Temporal nodes `t_0, ..., t_N` reached so far.
    pub fn times(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.slabs.len() + 1);
        t.push(self.slabs.first().map(|s| s.slab.t_start()).unwrap_or(0.0));
        t.extend(self.slabs.iter().map(|s| s.slab.t_end()));
        t
    }

    /// Spatial state at each temporal node.
    pub fn node_states(&self) -> Vec<Vec<f64>> {
        let mut out = vec![self.initial.clone()];
        out.extend(self.slabs.iter().map(|s| s.z.final_state()));
        out
    }

    pub fn final_state(&self) -> Vec<f64> {
        match self.slabs.last() {
            Some(s) => s.z.final_state(),
            None => self.initial.clone(),
        }
    }
}

/// Result of a run that may have stopped early.
#[derive(Debug)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub failure: Option<Error>,
}

impl Discretisation {
    pub fn new(problem: MultisymplecticProblem, variant: SchemeVariant, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let length = problem.domain_length();
        let mf = length / config.dx;
        let m = mf.round();
        if m < 1.0 || (m - mf).abs() > 1e-6 * mf.max(1.0) {
            return Err(Error::invalid(format!("dx = {} does not divide the domain length {length}", config.dx)));
        }
        let partition = uniform_partition(length, m as usize, true)?;
        let space = SpatialSpace::new(partition, config.p, variant.continuity())?;
        Self::with_space(problem, variant, space, config.q, config.newton_tolerance, config.max_newton_iterations)
    }

    pub fn with_space(
        problem: MultisymplecticProblem,
        variant: SchemeVariant,
        space: SpatialSpace,
        q: usize,
        newton_tolerance: f64,
        max_newton_iterations: usize,
    ) -> Result<Self> {
        if space.continuity() != variant.continuity() {
            return Err(Error::invalid(format!("variant {variant} needs a {:?} space", variant.continuity())));
        }
        if (space.partition().total_length() - problem.domain_length()).abs() > 1e-12 * problem.domain_length() {
            return Err(Error::invalid("mesh length differs from the problem's domain length"));
        }
        let deg = problem.hamiltonian().gradient_degree();
        let p = space.degree();
        let rule_x = policy_rule((deg + 1) * p);
        let rule_t = policy_rule(deg * (q + 1) + q + 1);
        let slab = TemporalSlab::new(0.0, 1.0, q)?;
        let tab_x = Tabulation::new(space.basis(), rule_x.points());
        let tab_trial = Tabulation::new(slab.trial(), rule_t.points());
        let tab_test = Tabulation::new(slab.test(), rule_t.points());
        let phi0 = space.basis().values(0.0);
        let phi1 = space.basis().values(1.0);
        let aux_space = match variant {
            SchemeVariant::CgMomentum => Some(SpatialSpace::new(space.partition().clone(), p, Continuity::Discontinuous)?),
            _ => None,
        };
        let g = match variant {
            SchemeVariant::DgPrimary => Some(GOperator::new(&space)?),
            _ => None,
        };
        Ok(Self {
            problem,
            variant,
            space,
            aux_space,
            q,
            rule_x,
            rule_t,
            tab_x,
            tab_trial,
            tab_test,
            phi0,
            phi1,
            g,
            newton_tolerance,
            max_newton_iterations,
        })
    }

    pub fn problem(&self) -> &MultisymplecticProblem {
        &self.problem
    }

    pub fn variant(&self) -> SchemeVariant {
        self.variant
    }

    pub fn space(&self) -> &SpatialSpace {
        &self.space
    }

    pub fn aux_space(&self) -> Option<&SpatialSpace> {
        self.aux_space.as_ref()
    }

    /// Space of field `var`: 0 is the solution, 1 the projected nonlinearity.
    fn field_space(&self, var: usize) -> &SpatialSpace {
        match var {
            0 => &self.space,
            _ => self.aux_space.as_ref().expect("auxiliary field only exists for the momentum variant"),
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Spatial rule shared by the scheme and the diagnostics.
    pub fn rule_x(&self) -> &QuadratureRule {
        &self.rule_x
    }

    pub fn rule_t(&self) -> &QuadratureRule {
        &self.rule_t
    }

    pub fn g_operator(&self) -> Option<&GOperator> {
        self.g.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn set_newton(&mut self, tolerance: f64, max_iterations: usize) {
        self.newton_tolerance = tolerance;
        self.max_newton_iterations = max_iterations;
    }

    /// Slab test-space dimension `D · (q + 1) · Σ dofs` over the fields; also the unknown count.
    pub fn system_size(&self) -> usize {
        let dofs: usize = (0..self.variant.field_count()).map(|v| self.field_space(v).dof_count()).sum();
        self.dim() * dofs * (self.q + 1)
    }

    fn block_size(&self) -> usize {
        let groups: usize = (0..self.variant.field_count()).map(|v| self.field_space(v).group_size()).sum();
        self.dim() * groups * (self.q + 1)
    }

    /// Position of unknown (or equation) `(field, component, spatial dof, free temporal index)`.
    #[inline]
    pub fn unknown_index(&self, var: usize, c: usize, s: usize, tl: usize) -> usize {
        let space = self.field_space(var);
        let offset = match var {
            0 => c * space.group_size(),
            _ => self.dim() * self.space.group_size() + c * space.group_size(),
        };
        let (pos, local) = space.band_group(s);
        pos * self.block_size() + (offset + local) * (self.q + 1) + tl
    }

    /// Projected initial data.
    pub fn initial_state(&self) -> Result<Vec<f64>> {
        let f = self.problem.initial_fn().clone();
        self.space.l2_project(self.dim(), move |x| f(x))
    }

    /// Projection of `∇S` of a spatial state into the auxiliary space (the solution space
    /// outside the momentum variant), with the scheme quadrature.
    pub fn project_gradient(&self, state: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let ns = self.space.dof_count();
        let mut z = vec![0.0; d];
        let target = self.aux_space.as_ref().unwrap_or(&self.space);
        target.l2_project_with(d, &self.rule_x, |e, xi, out| {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc = self.space.eval_local(&state[c * ns..(c + 1) * ns], e, xi);
            }
            self.problem.hamiltonian().gradient(&z, out);
        })
    }

    /// Free unknowns (temporal nodes 1..=q+1) packed into a vector.
    pub fn pack(&self, z: &SlabCoefficients, aux: Option<&SlabCoefficients>) -> Vec<f64> {
        let mut x = vec![0.0; self.system_size()];
        for (var, field) in [Some(z), aux].into_iter().enumerate().take(self.variant.field_count()) {
            let field = field.expect("momentum variant needs the auxiliary field");
            let ns = self.field_space(var).dof_count();
            for c in 0..self.dim() {
                for s in 0..ns {
                    for tl in 0..=self.q {
                        x[self.unknown_index(var, c, s, tl)] = field.get(c, s, tl + 1);
                    }
                }
            }
        }
        x
    }

    /// Inverse of [`pack`](Self::pack) given the fixed temporal node 0 data.
    pub fn unpack(&self, x: &[f64], z0: &[f64], aux0: Option<&[f64]>) -> (SlabCoefficients, Option<SlabCoefficients>) {
        let d = self.dim();
        let build = |var: usize, init: &[f64]| {
            let ns = self.field_space(var).dof_count();
            let mut f = SlabCoefficients::zeros(d, ns, self.q);
            for c in 0..d {
                for s in 0..ns {
                    f.set(c, s, 0, init[c * ns + s]);
                    for tl in 0..=self.q {
                        f.set(c, s, tl + 1, x[self.unknown_index(var, c, s, tl)]);
                    }
                }
            }
            f
        };
        let z = build(0, z0);
        let aux = (self.variant == SchemeVariant::CgMomentum).then(|| build(1, aux0.expect("auxiliary initial data")));
        (z, aux)
    }

    fn check_fields(&self, z: &SlabCoefficients, aux: Option<&SlabCoefficients>) -> Result<()> {
        let ok = |f: &SlabCoefficients, space: &SpatialSpace| {
            f.components() == self.dim() && f.spatial_dofs() == space.dof_count() && f.temporal_nodes() == self.q + 2
        };
        if !ok(z, &self.space) {
            return Err(Error::invalid("slab coefficients do not match the discretisation"));
        }
        match (self.variant, aux) {
            (SchemeVariant::CgMomentum, Some(a)) if ok(a, self.field_space(1)) => Ok(()),
            (SchemeVariant::CgMomentum, _) => Err(Error::invalid("momentum variant needs a matching auxiliary field")),
            (_, _) => Ok(()),
        }
    }

    /// Local coefficients `[c][a][l]` of a field on element `e`, flattened.
    fn gather(&self, space: &SpatialSpace, f: &SlabCoefficients, e: usize, out: &mut [f64]) {
        let nl = space.local_dim();
        let nt = self.q + 2;
        for c in 0..self.dim() {
            for a in 0..nl {
                let s = space.dof(e, a);
                for l in 0..nt {
                    out[(c * nl + a) * nt + l] = f.get(c, s, l);
                }
            }
        }
    }

    /// Residual over the test space, indexed by [`unknown_index`](Self::unknown_index).
    pub fn assemble_residual(&self, slab: &TemporalSlab, z: &SlabCoefficients, aux: Option<&SlabCoefficients>) -> Result<Vec<f64>> {
        self.check_fields(z, aux)?;
        let d = self.dim();
        let nl = self.space.local_dim();
        let nt = self.q + 2;
        let nk = self.q + 1;
        let dt = slab.dt();
        let (kmat, lmat) = (self.problem.k(), self.problem.l());
        let momentum = self.variant == SchemeVariant::CgMomentum;
        let mut r = vec![0.0; self.system_size()];
        let mut zl = vec![0.0; d * nl * nt];
        let mut nlc = vec![0.0; d * nl * nt];
        let (mut zv, mut zt, mut zx, mut nv, mut grad, mut f) =
            (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let mut kz = vec![0.0; d];
        let mut lz = vec![0.0; d];
        let mut dofs = vec![0usize; nl];
        let mut aux_dofs = vec![0usize; nl];
        for e in 0..self.space.element_count() {
            let h = self.space.partition().element_length(e);
            self.gather(&self.space, z, e, &mut zl);
            if let Some(a) = aux {
                let space = self.field_space(1);
                self.gather(space, a, e, &mut nlc);
                for (k, s) in aux_dofs.iter_mut().enumerate() {
                    *s = space.dof(e, k);
                }
            }
            for (a, s) in dofs.iter_mut().enumerate() {
                *s = self.space.dof(e, a);
            }
            for (g, &wg) in self.rule_t.weights().iter().enumerate() {
                let th = &self.tab_trial.phi[g];
                let dth = &self.tab_trial.dphi[g];
                let psi = &self.tab_test.phi[g];
                for (i, &wi) in self.rule_x.weights().iter().enumerate() {
                    let w = dt * wg * h * wi;
                    let ph = &self.tab_x.phi[i];
                    let dph = &self.tab_x.dphi[i];
                    for c in 0..d {
                        let (mut v, mut vt, mut vx, mut vn) = (0.0, 0.0, 0.0, 0.0);
                        for a in 0..nl {
                            let row = &zl[(c * nl + a) * nt..(c * nl + a + 1) * nt];
                            let (mut s0, mut s1) = (0.0, 0.0);
                            for l in 0..nt {
                                s0 += row[l] * th[l];
                                s1 += row[l] * dth[l];
                            }
                            v += s0 * ph[a];
                            vt += s1 * ph[a];
                            vx += s0 * dph[a];
                            if momentum {
                                let nrow = &nlc[(c * nl + a) * nt..(c * nl + a + 1) * nt];
                                vn += nrow.iter().zip(th).map(|(x, y)| x * y).sum::<f64>() * ph[a];
                            }
                        }
                        zv[c] = v;
                        zt[c] = vt / dt;
                        zx[c] = vx / h;
                        nv[c] = vn;
                    }
                    self.problem.hamiltonian().gradient(&zv, &mut grad);
                    MultisymplecticProblem::apply(kmat, &zt, &mut kz);
                    MultisymplecticProblem::apply(lmat, &zx, &mut lz);
                    for c in 0..d {
                        f[c] = kz[c] + lz[c] - if momentum { nv[c] } else { grad[c] };
                    }
                    for c in 0..d {
                        for (a, &s) in dofs.iter().enumerate() {
                            let wa = w * f[c] * ph[a];
                            for k in 0..nk {
                                r[self.unknown_index(0, c, s, k)] += wa * psi[k];
                            }
                            if momentum {
                                let wn = w * (nv[c] - grad[c]) * ph[a];
                                for l in 1..nt {
                                    r[self.unknown_index(1, c, aux_dofs[a], l - 1)] += wn * th[l];
                                }
                            }
                        }
                    }
                }
            }
        }
        if self.variant == SchemeVariant::DgPrimary {
            self.add_interface_residual(slab, z, &mut r);
        }
        Ok(r)
    }

    /// `−Σ_m ∫ ½ (L [Z_m]) · ψ` terms of the average-flux derivative.
    fn add_interface_residual(&self, slab: &TemporalSlab, z: &SlabCoefficients, r: &mut [f64]) {
        let d = self.dim();
        let m_count = self.space.element_count();
        let nl = self.space.local_dim();
        let nk = self.q + 1;
        let nt = self.q + 2;
        let lmat = self.problem.l();
        let mut jump = vec![0.0; d];
        let mut lj = vec![0.0; d];
        for m in 0..m_count {
            let left = (m + m_count - 1) % m_count;
            for (g, &wg) in self.rule_t.weights().iter().enumerate() {
                let th = &self.tab_trial.phi[g];
                let psi = &self.tab_test.phi[g];
                for (c, jc) in jump.iter_mut().enumerate() {
                    let mut v = 0.0;
                    for a in 0..nl {
                        let (sl, sr) = (self.space.dof(left, a), self.space.dof(m, a));
                        for l in 0..nt {
                            v += th[l] * (z.get(c, sl, l) * self.phi1[a] - z.get(c, sr, l) * self.phi0[a]);
                        }
                    }
                    *jc = v;
                }
                MultisymplecticProblem::apply(lmat, &jump, &mut lj);
                let w = 0.5 * slab.dt() * wg;
                for c in 0..d {
                    for a in 0..nl {
                        let (sl, sr) = (self.space.dof(left, a), self.space.dof(m, a));
                        for k in 0..nk {
                            r[self.unknown_index(0, c, sl, k)] -= w * lj[c] * self.phi1[a] * psi[k];
                            r[self.unknown_index(0, c, sr, k)] -= w * lj[c] * self.phi0[a] * psi[k];
                        }
                    }
                }
            }
        }
    }

    /// Jacobian of [`assemble_residual`](Self::assemble_residual) with respect to the free unknowns.
    pub fn assemble_jacobian(&self, slab: &TemporalSlab, z: &SlabCoefficients, aux: Option<&SlabCoefficients>) -> Result<BandMatrix> {
        self.check_fields(z, aux)?;
        let d = self.dim();
        let nl = self.space.local_dim();
        let nt = self.q + 2;
        let nk = self.q + 1;
        let dt = slab.dt();
        let (kmat, lmat) = (self.problem.k(), self.problem.l());
        let momentum = self.variant == SchemeVariant::CgMomentum;
        let hb = self.space.ring().half_bandwidth(self.block_size());
        let mut jac = BandMatrix::zeros(self.system_size(), hb, hb);
        let mut zl = vec![0.0; d * nl * nt];
        let mut zv = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        let mut dofs = vec![vec![0usize; nl]; self.variant.field_count()];
        // local block: rows (var, c, a, k), cols (var, c', b, l-1)
        let nloc = self.variant.field_count() * d * nl * nk;
        let mut local = vec![0.0; nloc * nloc];
        let li = |var: usize, c: usize, a: usize, k: usize| ((var * d + c) * nl + a) * nk + k;
        for e in 0..self.space.element_count() {
            let h = self.space.partition().element_length(e);
            self.gather(&self.space, z, e, &mut zl);
            for (var, vd) in dofs.iter_mut().enumerate() {
                let space = self.field_space(var);
                for (a, s) in vd.iter_mut().enumerate() {
                    *s = space.dof(e, a);
                }
            }
            local.iter_mut().for_each(|x| *x = 0.0);
            for (g, &wg) in self.rule_t.weights().iter().enumerate() {
                let th = &self.tab_trial.phi[g];
                let dth = &self.tab_trial.dphi[g];
                let psi = &self.tab_test.phi[g];
                for (i, &wi) in self.rule_x.weights().iter().enumerate() {
                    let w = dt * wg * h * wi;
                    let ph = &self.tab_x.phi[i];
                    let dph = &self.tab_x.dphi[i];
                    for c in 0..d {
                        let mut v = 0.0;
                        for a in 0..nl {
                            let row = &zl[(c * nl + a) * nt..(c * nl + a + 1) * nt];
                            v += row.iter().zip(th).map(|(x, y)| x * y).sum::<f64>() * ph[a];
                        }
                        zv[c] = v;
                    }
                    self.problem.hamiltonian().hessian(&zv, &mut hess);
                    for c in 0..d {
                        for cp in 0..d {
                            let kc = kmat[c * d + cp];
                            let lc = lmat[c * d + cp];
                            let hc = hess[c * d + cp];
                            let nonlin = if momentum { 0.0 } else { hc };
                            if kc == 0.0 && lc == 0.0 && hc == 0.0 && !(momentum && c == cp) {
                                continue;
                            }
                            for a in 0..nl {
                                let wa = w * ph[a];
                                for b in 0..nl {
                                    for l in 1..nt {
                                        let dval = kc * dth[l] / dt * ph[b] + lc * th[l] * dph[b] / h - nonlin * th[l] * ph[b];
                                        if dval != 0.0 {
                                            for k in 0..nk {
                                                local[li(0, c, a, k) * nloc + li(0, cp, b, l - 1)] += wa * psi[k] * dval;
                                            }
                                        }
                                        if momentum {
                                            let basis = th[l] * ph[b];
                                            if c == cp {
                                                // main equation: −N; auxiliary equation: +N
                                                for k in 0..nk {
                                                    local[li(0, c, a, k) * nloc + li(1, cp, b, l - 1)] -= wa * psi[k] * basis;
                                                }
                                                for kk in 1..nt {
                                                    local[li(1, c, a, kk - 1) * nloc + li(1, cp, b, l - 1)] += wa * th[kk] * basis;
                                                }
                                            }
                                            if hc != 0.0 {
                                                for kk in 1..nt {
                                                    local[li(1, c, a, kk - 1) * nloc + li(0, cp, b, l - 1)] -= wa * th[kk] * hc * basis;
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for var in 0..self.variant.field_count() {
                for c in 0..d {
                    for a in 0..nl {
                        for k in 0..nk {
                            let row = self.unknown_index(var, c, dofs[var][a], k);
                            let lr = li(var, c, a, k);
                            for varp in 0..self.variant.field_count() {
                                for cp in 0..d {
                                    for b in 0..nl {
                                        for tl in 0..nk {
                                            let v = local[lr * nloc + li(varp, cp, b, tl)];
                                            if v != 0.0 {
                                                jac.add(row, self.unknown_index(varp, cp, dofs[varp][b], tl), v);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if self.variant == SchemeVariant::DgPrimary {
            self.add_interface_jacobian(slab, &mut jac);
        }
        Ok(jac)
    }

    fn add_interface_jacobian(&self, slab: &TemporalSlab, jac: &mut BandMatrix) {
        let d = self.dim();
        let m_count = self.space.element_count();
        let nl = self.space.local_dim();
        let nk = self.q + 1;
        let nt = self.q + 2;
        let lmat = self.problem.l();
        // time integrals ∫ θ_l ψ_k
        let mut tint = vec![0.0; nt * nk];
        for (g, &wg) in self.rule_t.weights().iter().enumerate() {
            for l in 0..nt {
                for k in 0..nk {
                    tint[l * nk + k] += slab.dt() * wg * self.tab_trial.phi[g][l] * self.tab_test.phi[g][k];
                }
            }
        }
        for m in 0..m_count {
            let left = (m + m_count - 1) % m_count;
            for c in 0..d {
                for cp in 0..d {
                    let lc = lmat[c * d + cp];
                    if lc == 0.0 {
                        continue;
                    }
                    for a in 0..nl {
                        for (test_el, test_val) in [(left, self.phi1[a]), (m, self.phi0[a])] {
                            if test_val == 0.0 {
                                continue;
                            }
                            let st = self.space.dof(test_el, a);
                            for b in 0..nl {
                                for (trial_el, trial_val) in [(left, self.phi1[b]), (m, -self.phi0[b])] {
                                    if trial_val == 0.0 {
                                        continue;
                                    }
                                    let sb = self.space.dof(trial_el, b);
                                    for l in 1..nt {
                                        for k in 0..nk {
                                            let v = -0.5 * lc * test_val * trial_val * tint[l * nk + k];
                                            jac.add(self.unknown_index(0, c, st, k), self.unknown_index(0, cp, sb, l - 1), v);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Newton iteration on one slab from `guess` (which fixes the temporal node 0 data).
    pub fn newton_solve(
        &self,
        slab: &TemporalSlab,
        guess: SlabCoefficients,
        aux_guess: Option<SlabCoefficients>,
    ) -> Result<SlabRecord> {
        self.check_fields(&guess, aux_guess.as_ref())?;
        let z0 = guess.initial_state();
        let n0 = aux_guess.as_ref().map(|a| a.initial_state());
        let mut x = self.pack(&guess, aux_guess.as_ref());
        let (mut z, mut aux) = (guess, aux_guess);
        let tol = self.newton_tolerance;
        let mut iterations = 0;
        loop {
            let r = self.assemble_residual(slab, &z, aux.as_ref())?;
            let rn = inf_norm(&r);
            if !rn.is_finite() {
                return Err(Error::SolverFailure { slab: None, reason: "non-finite residual".into(), iterations, residual: rn });
            }
            if rn <= tol {
                return Ok(SlabRecord { slab: slab.clone(), z, aux, iterations, residual: rn });
            }
            if iterations >= self.max_newton_iterations {
                return Err(Error::SolverFailure { slab: None, reason: "Newton iteration limit reached".into(), iterations, residual: rn });
            }
            let jac = self.assemble_jacobian(slab, &z, aux.as_ref())?;
            let lu = jac.factor().map_err(|e| Error::SolverFailure {
                slab: None,
                reason: format!("singular Jacobian ({e})"),
                iterations,
                residual: rn,
            })?;
            let mut step: Vec<f64> = r.iter().map(|v| -v).collect();
            lu.solve_in_place(&mut step);
            for (xi, si) in x.iter_mut().zip(&step) {
                *xi += si;
            }
            iterations += 1;
            let (nz, na) = self.unpack(&x, &z0, n0.as_deref());
            z = nz;
            aux = na;
            if inf_norm(&step) <= 1e-14 * inf_norm(&x).max(1.0) {
                let r = self.assemble_residual(slab, &z, aux.as_ref())?;
                let rn = inf_norm(&r);
                if rn <= 10.0 * tol {
                    return Ok(SlabRecord { slab: slab.clone(), z, aux, iterations, residual: rn });
                }
                return Err(Error::SolverFailure { slab: None, reason: "Newton stagnated".into(), iterations, residual: rn });
            }
        }
    }

    /// Advance from `initial` through the given time nodes, stopping at the first failure.
    pub fn run_from(&self, initial: Vec<f64>, times: &[f64]) -> RunOutcome {
        let d = self.dim();
        let ns = self.space.dof_count();
        let mut trajectory = Trajectory { initial: initial.clone(), slabs: Vec::with_capacity(times.len().saturating_sub(1)) };
        let mut state = initial;
        let mut aux_state = (self.variant == SchemeVariant::CgMomentum).then(|| self.project_gradient(&state));
        for (n, w) in times.windows(2).enumerate() {
            let slab = match TemporalSlab::new(w[0], w[1], self.q) {
                Ok(s) => s,
                Err(e) => return RunOutcome { trajectory, failure: Some(e) },
            };
            let guess = SlabCoefficients::constant_extension(d, ns, self.q, &state);
            let aux_guess = aux_state.as_ref().map(|a| SlabCoefficients::constant_extension(d, a.len() / d, self.q, a));
            match self.newton_solve(&slab, guess, aux_guess) {
                Ok(rec) => {
                    state = rec.z.final_state();
                    aux_state = rec.aux.as_ref().map(|a| a.final_state());
                    trajectory.slabs.push(rec);
                }
                Err(e) => return RunOutcome { trajectory, failure: Some(e.on_slab(n)) },
            }
        }
        RunOutcome { trajectory, failure: None }
    }

    /// Project the problem's initial data and advance to `config.t_final`.
    pub fn run(&self, config: &SolverConfig) -> Result<RunOutcome> {
        let initial = self.initial_state()?;
        Ok(self.run_from(initial, &config.time_nodes()))
    }
}

/// Build the discretisation and run; any solver failure is returned as an error.
pub fn run_simulation(variant: SchemeVariant, problem: MultisymplecticProblem, config: &SolverConfig) -> Result<(Discretisation, Trajectory)> {
    let disc = Discretisation::new(problem, variant, config)?;
    let out = disc.run(config)?;
    match out.failure {
        Some(e) => Err(e),
        None => Ok((disc, out.trajectory)),
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    if v.iter().any(|x| x.is_nan()) {
        return f64::NAN;
    }
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
