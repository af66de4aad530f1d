//! Periodic spatial finite element spaces, temporal slabs and slab coefficient storage.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::basis::{LagrangeBasis, Tabulation};
use crate::error::{Error, Result};
use crate::linalg::{BandLu, BandMatrix, RingOrder};
use crate::mesh::Partition1D;
use crate::quadrature::{gauss_legendre, policy_rule, QuadratureRule, CAPPED_EXACTNESS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Continuity {
    Continuous,
    Discontinuous,
}

/// Degree-`p` piecewise polynomials on a periodic partition.
#[derive(Debug, Clone)]
pub struct SpatialSpace {
    partition: Partition1D,
    degree: usize,
    continuity: Continuity,
    basis: LagrangeBasis,
    ring: RingOrder,
    ref_mass: Vec<f64>,
    mass_lu: OnceLock<BandLu>,
}

impl SpatialSpace {
    pub fn new(partition: Partition1D, degree: usize, continuity: Continuity) -> Result<Self> {
        if !partition.is_periodic() {
            return Err(Error::invalid("spatial spaces are built on periodic partitions"));
        }
        if continuity == Continuity::Continuous && degree == 0 {
            return Err(Error::invalid("continuous spaces need degree p >= 1"));
        }
        let basis = LagrangeBasis::equispaced(degree);
        let rule = policy_rule(2 * degree);
        let n = degree + 1;
        let mut ref_mass = vec![0.0; n * n];
        for (x, w) in rule.iter() {
            let v = basis.values(x);
            for a in 0..n {
                for b in 0..n {
                    ref_mass[a * n + b] += w * v[a] * v[b];
                }
            }
        }
        let ring = RingOrder::new(partition.element_count());
        let space = Self { partition, degree, continuity, basis, ring, ref_mass, mass_lu: OnceLock::new() };
        let lu = space.assemble_band_mass().factor()?;
        let _ = space.mass_lu.set(lu);
        Ok(space)
    }

    pub fn partition(&self) -> &Partition1D {
        &self.partition
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn continuity(&self) -> Continuity {
        self.continuity
    }

    pub fn is_continuous(&self) -> bool {
        self.continuity == Continuity::Continuous
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn element_count(&self) -> usize {
        self.partition.element_count()
    }

    /// Local basis functions per element.
    pub fn local_dim(&self) -> usize {
        self.degree + 1
    }

    pub fn dof_count(&self) -> usize {
        self.element_count() * self.group_size()
    }

    /// Degrees of freedom owned by each element in the band ordering.
    pub fn group_size(&self) -> usize {
        match self.continuity {
            Continuity::Continuous => self.degree,
            Continuity::Discontinuous => self.degree + 1,
        }
    }

    /// Global DOF of local node `a` on element `e`.
    #[inline]
    pub fn dof(&self, e: usize, a: usize) -> usize {
        match self.continuity {
            Continuity::Continuous => (e * self.degree + a) % self.dof_count(),
            Continuity::Discontinuous => e * (self.degree + 1) + a,
        }
    }

    /// All `(element, local node)` pairs touching DOF `s`.
    pub fn dof_support(&self, s: usize) -> Vec<(usize, usize)> {
        let m = self.element_count();
        let g = self.group_size();
        let (e, a) = (s / g, s % g);
        let mut out = vec![(e, a)];
        if self.is_continuous() && a == 0 {
            out.push(((e + m - 1) % m, self.degree));
        }
        out
    }

    pub(crate) fn ring(&self) -> &RingOrder {
        &self.ring
    }

    /// Ring position of the group owning DOF `s`, and the DOF's index within that group.
    #[inline]
    pub(crate) fn band_group(&self, s: usize) -> (usize, usize) {
        let g = self.group_size();
        (self.ring.position(s / g), s % g)
    }

    fn band_index(&self, s: usize) -> usize {
        let (pos, local) = self.band_group(s);
        pos * self.group_size() + local
    }

    /// Reference mass matrix on `[0, 1]`, row-major.
    pub fn reference_mass(&self) -> &[f64] {
        &self.ref_mass
    }

    fn assemble_band_mass(&self) -> BandMatrix {
        let n = self.dof_count();
        let hb = self.ring.half_bandwidth(self.group_size());
        let mut a = BandMatrix::zeros(n, hb, hb);
        let nl = self.local_dim();
        for e in 0..self.element_count() {
            let h = self.partition.element_length(e);
            for i in 0..nl {
                for j in 0..nl {
                    let (r, c) = (self.band_index(self.dof(e, i)), self.band_index(self.dof(e, j)));
                    a.add(r, c, h * self.ref_mass[i * nl + j]);
                }
            }
        }
        a
    }

    /// Dense global mass matrix `∫ φ_i φ_j dx`.
    pub fn mass_matrix(&self) -> DMatrix<f64> {
        let n = self.dof_count();
        let nl = self.local_dim();
        let mut m = DMatrix::zeros(n, n);
        for e in 0..self.element_count() {
            let h = self.partition.element_length(e);
            for i in 0..nl {
                for j in 0..nl {
                    m[(self.dof(e, i), self.dof(e, j))] += h * self.ref_mass[i * nl + j];
                }
            }
        }
        m
    }

    /// Solve `M x = b` for one scalar component, in place.
    pub fn solve_mass(&self, b: &mut [f64]) {
        let n = self.dof_count();
        assert_eq!(b.len(), n);
        let mut tmp = vec![0.0; n];
        for (s, &v) in b.iter().enumerate() {
            tmp[self.band_index(s)] = v;
        }
        self.mass_lu.get().expect("factorised in new").solve_in_place(&mut tmp);
        for (s, v) in b.iter_mut().enumerate() {
            *v = tmp[self.band_index(s)];
        }
    }

    /// Evaluate one scalar component on element `e` at reference coordinate `xi`.
    pub fn eval_local(&self, u: &[f64], e: usize, xi: f64) -> f64 {
        (0..self.local_dim()).map(|a| u[self.dof(e, a)] * self.basis.value(a, xi)).sum()
    }

    /// Spatial derivative of one scalar component on element `e` at `xi`.
    pub fn eval_local_derivative(&self, u: &[f64], e: usize, xi: f64) -> f64 {
        let h = self.partition.element_length(e);
        (0..self.local_dim()).map(|a| u[self.dof(e, a)] * self.basis.derivative(a, xi)).sum::<f64>() / h
    }

    /// Evaluate a scalar component at physical `x` (right-hand limit at nodes).
    pub fn eval(&self, u: &[f64], x: f64) -> Result<f64> {
        let (e, xi) = self.partition.locate(x)?;
        Ok(self.eval_local(u, e, xi))
    }

    /// Project `D` components given elementwise by `f(e, xi, out)` using `rule` on each element.
    ///
    /// Output is component-major: entry `c * dof_count + s`.
    pub fn l2_project_with(
        &self,
        d: usize,
        rule: &QuadratureRule,
        mut f: impl FnMut(usize, f64, &mut [f64]),
    ) -> Vec<f64> {
        let ns = self.dof_count();
        let nl = self.local_dim();
        let tab = Tabulation::new(&self.basis, rule.points());
        let mut rhs = vec![0.0; d * ns];
        let mut val = vec![0.0; d];
        for e in 0..self.element_count() {
            let h = self.partition.element_length(e);
            for (k, (xi, w)) in rule.iter().enumerate() {
                f(e, xi, &mut val);
                for a in 0..nl {
                    let s = self.dof(e, a);
                    let wa = h * w * tab.phi[k][a];
                    for c in 0..d {
                        rhs[c * ns + s] += wa * val[c];
                    }
                }
            }
        }
        for c in 0..d {
            self.solve_mass(&mut rhs[c * ns..(c + 1) * ns]);
        }
        rhs
    }

    /// L2 projection of `f: x -> R^D` with the capped Gauss rule.
    pub fn l2_project(&self, d: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Vec<f64>> {
        let rule = policy_rule(CAPPED_EXACTNESS + 1);
        let mut bad = None;
        let out = self.l2_project_with(d, &rule, |e, xi, out| {
            let x = self.partition.element_start(e) + xi * self.partition.element_length(e);
            let v = f(x);
            if v.len() != d {
                bad = Some(v.len());
            } else {
                out.copy_from_slice(&v);
            }
        });
        match bad {
            Some(len) => Err(Error::invalid(format!("field returned {len} components, expected {d}"))),
            None => Ok(out),
        }
    }

    /// Re-express a coefficient vector of this (continuous) space in the matching discontinuous space.
    pub fn to_discontinuous(&self, u: &[f64], target: &SpatialSpace) -> Result<Vec<f64>> {
        if target.degree != self.degree || target.element_count() != self.element_count() {
            return Err(Error::invalid("target space has different degree or mesh"));
        }
        let mut out = vec![0.0; target.dof_count()];
        for e in 0..self.element_count() {
            for a in 0..self.local_dim() {
                out[target.dof(e, a)] = u[self.dof(e, a)];
            }
        }
        Ok(out)
    }
}

/// One temporal element with its trial (degree q+1) and test (degree q) bases.
#[derive(Debug, Clone)]
pub struct TemporalSlab {
    t_start: f64,
    t_end: f64,
    q: usize,
    trial: LagrangeBasis,
    test: LagrangeBasis,
}

impl TemporalSlab {
    pub fn new(t_start: f64, t_end: f64, q: usize) -> Result<Self> {
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::invalid(format!("slab needs t_end > t_start, got [{t_start}, {t_end}]")));
        }
        Ok(Self {
            t_start,
            t_end,
            q,
            trial: LagrangeBasis::equispaced(q + 1),
            test: LagrangeBasis::equispaced(q),
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn trial_degree(&self) -> usize {
        self.q + 1
    }

    pub fn test_degree(&self) -> usize {
        self.q
    }

    pub fn trial(&self) -> &LagrangeBasis {
        &self.trial
    }

    pub fn test(&self) -> &LagrangeBasis {
        &self.test
    }

    /// Reference coordinate of `t`, or an error if `t` lies outside the slab.
    pub fn reference(&self, t: f64) -> Result<f64> {
        let tol = 1e-12 * self.dt().max(self.t_end.abs());
        if t < self.t_start - tol || t > self.t_end + tol {
            return Err(Error::invalid(format!(
                "time {t} outside slab [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        Ok(((t - self.t_start) / self.dt()).clamp(0.0, 1.0))
    }

    pub fn time_at(&self, tau: f64) -> f64 {
        self.t_start + tau * self.dt()
    }
}

/// Coefficients of a `D`-component space-time field on one slab.
///
/// Layout: `values[(c * spatial_dofs + s) * temporal_nodes + l]`, where
/// temporal node 0 is the slab start.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabCoefficients {
    components: usize,
    spatial_dofs: usize,
    temporal_nodes: usize,
    values: Vec<f64>,
}

impl SlabCoefficients {
    pub fn zeros(components: usize, spatial_dofs: usize, q: usize) -> Self {
        let temporal_nodes = q + 2;
        Self { components, spatial_dofs, temporal_nodes, values: vec![0.0; components * spatial_dofs * temporal_nodes] }
    }

    /// Constant-in-time extension of a state given component-major (`c * spatial_dofs + s`).
    pub fn constant_extension(components: usize, spatial_dofs: usize, q: usize, state: &[f64]) -> Self {
        assert_eq!(state.len(), components * spatial_dofs);
        let mut z = Self::zeros(components, spatial_dofs, q);
        for (i, &v) in state.iter().enumerate() {
            for l in 0..z.temporal_nodes {
                z.values[i * z.temporal_nodes + l] = v;
            }
        }
        z
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn spatial_dofs(&self) -> usize {
        self.spatial_dofs
    }

    pub fn temporal_nodes(&self) -> usize {
        self.temporal_nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn index(&self, c: usize, s: usize, l: usize) -> usize {
        (c * self.spatial_dofs + s) * self.temporal_nodes + l
    }

    #[inline]
    pub fn get(&self, c: usize, s: usize, l: usize) -> f64 {
        self.values[self.index(c, s, l)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, s: usize, l: usize, v: f64) {
        let i = self.index(c, s, l);
        self.values[i] = v;
    }

    /// Spatial coefficients at temporal node `l`, component-major.
    pub fn node_state(&self, l: usize) -> Vec<f64> {
        (0..self.components * self.spatial_dofs).map(|i| self.values[i * self.temporal_nodes + l]).collect()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.node_state(0)
    }

    pub fn final_state(&self) -> Vec<f64> {
        self.node_state(self.temporal_nodes - 1)
    }

    /// Spatial coefficients at reference time `tau`, component-major.
    pub fn state_at(&self, trial: &LagrangeBasis, tau: f64) -> Vec<f64> {
        let th = trial.values(tau);
        (0..self.components * self.spatial_dofs)
            .map(|i| {
                let row = &self.values[i * self.temporal_nodes..(i + 1) * self.temporal_nodes];
                row.iter().zip(&th).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Time derivative of the spatial coefficients at reference time `tau`, in physical units.
    pub fn rate_at(&self, trial: &LagrangeBasis, tau: f64, dt: f64) -> Vec<f64> {
        let th = trial.derivatives(tau);
        (0..self.components * self.spatial_dofs)
            .map(|i| {
                let row = &self.values[i * self.temporal_nodes..(i + 1) * self.temporal_nodes];
                row.iter().zip(&th).map(|(a, b)| a * b).sum::<f64>() / dt
            })
            .collect()
    }
}

/// Evaluate the field at physical `(t, x)`.
pub fn eval_field(
    space: &SpatialSpace,
    slab: &TemporalSlab,
    coeffs: &SlabCoefficients,
    t: f64,
    x: f64,
) -> Result<Vec<f64>> {
    let tau = slab.reference(t)?;
    let (e, xi) = space.partition().locate(x)?;
    let state = coeffs.state_at(slab.trial(), tau);
    let ns = space.dof_count();
    Ok((0..coeffs.components())
        .map(|c| space.eval_local(&state[c * ns..(c + 1) * ns], e, xi))
        .collect())
}

/// A field in the space-time test space (degree q in time, spatial space in space).
///
/// Layout: `values[(c * spatial_dofs + s) * (q + 1) + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCoefficients {
    pub components: usize,
    pub spatial_dofs: usize,
    pub temporal_dim: usize,
    pub values: Vec<f64>,
}

impl TestCoefficients {
    /// Spatial coefficients at reference time `tau`, component-major.
    pub fn state_at(&self, test: &LagrangeBasis, tau: f64) -> Vec<f64> {
        let psi = test.values(tau);
        (0..self.components * self.spatial_dofs)
            .map(|i| {
                let row = &self.values[i * self.temporal_dim..(i + 1) * self.temporal_dim];
                row.iter().zip(&psi).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    pub fn eval(&self, space: &SpatialSpace, slab: &TemporalSlab, t: f64, x: f64) -> Result<Vec<f64>> {
        let tau = slab.reference(t)?;
        let (e, xi) = space.partition().locate(x)?;
        let state = self.state_at(slab.test(), tau);
        let ns = self.spatial_dofs;
        Ok((0..self.components).map(|c| space.eval_local(&state[c * ns..(c + 1) * ns], e, xi)).collect())
    }
}

/// L2 projection onto (degree q in time) x `space` of a field given elementwise as
/// `f(tau, e, xi, out)` with reference coordinates, using the given rules.
pub fn l2_project_spacetime_with(
    space: &SpatialSpace,
    slab: &TemporalSlab,
    d: usize,
    rule_t: &QuadratureRule,
    rule_x: &QuadratureRule,
    mut f: impl FnMut(f64, usize, f64, &mut [f64]),
) -> TestCoefficients {
    let nt = slab.q() + 1;
    let ns = space.dof_count();
    let test_tab = Tabulation::new(slab.test(), rule_t.points());
    // Spatial projections at each temporal point, then a temporal projection.
    let mut at_points = Vec::with_capacity(rule_t.len());
    for &tau in rule_t.points() {
        at_points.push(space.l2_project_with(d, rule_x, |e, xi, out| f(tau, e, xi, out)));
    }
    let mut mt = DMatrix::zeros(nt, nt);
    for (g, &w) in rule_t.weights().iter().enumerate() {
        for a in 0..nt {
            for b in 0..nt {
                mt[(a, b)] += w * test_tab.phi[g][a] * test_tab.phi[g][b];
            }
        }
    }
    let lu = mt.lu();
    let mut values = vec![0.0; d * ns * nt];
    let mut rhs = nalgebra::DVector::zeros(nt);
    for i in 0..d * ns {
        rhs.fill(0.0);
        for (g, &w) in rule_t.weights().iter().enumerate() {
            for k in 0..nt {
                rhs[k] += w * test_tab.phi[g][k] * at_points[g][i];
            }
        }
        let sol = lu.solve(&rhs).expect("temporal mass is SPD");
        values[i * nt..(i + 1) * nt].copy_from_slice(sol.as_slice());
    }
    TestCoefficients { components: d, spatial_dofs: ns, temporal_dim: nt, values }
}

/// L2 projection of `field(t, x)` onto (degree q in time) x `space` with capped rules.
pub fn l2_project_spacetime(
    space: &SpatialSpace,
    slab: &TemporalSlab,
    d: usize,
    field: impl Fn(f64, f64) -> Vec<f64>,
) -> TestCoefficients {
    let rule = gauss_legendre(crate::quadrature::MAX_GAUSS_POINTS).expect("n >= 1");
    l2_project_spacetime_with(space, slab, d, &rule, &rule, |tau, e, xi, out| {
        let t = slab.time_at(tau);
        let x = space.partition().element_start(e) + xi * space.partition().element_length(e);
        out.copy_from_slice(&field(t, x)[..d]);
    })
}
