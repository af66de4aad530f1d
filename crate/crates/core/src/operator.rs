//! Jumps, averages and the discrete derivative `G` on broken spaces.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::quadrature::policy_rule;
use crate::space::{Continuity, SpatialSpace};

/// Left and right limits `U_m^-`, `U_m^+` at mesh node `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceValues {
    pub node_index: usize,
    pub left_value: Vec<f64>,
    pub right_value: Vec<f64>,
}

impl TraceValues {
    /// Traces of a `D`-component field (component-major coefficients) at node `m`.
    pub fn of_field(space: &SpatialSpace, u: &[f64], m: usize) -> Self {
        let ns = space.dof_count();
        let me = space.element_count();
        let d = u.len() / ns;
        let prev = (m + me - 1) % me;
        let m = m % me;
        Self {
            node_index: m,
            left_value: (0..d).map(|c| space.eval_local(&u[c * ns..(c + 1) * ns], prev, 1.0)).collect(),
            right_value: (0..d).map(|c| space.eval_local(&u[c * ns..(c + 1) * ns], m, 0.0)).collect(),
        }
    }
}

/// `[U] = U^- − U^+`.
pub fn jump(trace: &TraceValues) -> Vec<f64> {
    trace.left_value.iter().zip(&trace.right_value).map(|(a, b)| a - b).collect()
}

/// `{U} = ½(U^- + U^+)`.
pub fn avg(trace: &TraceValues) -> Vec<f64> {
    trace.left_value.iter().zip(&trace.right_value).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Discrete derivative with average fluxes on a periodic discontinuous space:
/// `∫ G(U) φ = Σ_m ∫ U_x φ − Σ_m [U_m] {φ_m}` for all `φ` in the space.
#[derive(Debug, Clone)]
pub struct GOperator {
    space: SpatialSpace,
    /// Per element: local matrices acting on the previous, own and next element coefficients.
    blocks: Vec<[Vec<f64>; 3]>,
    jump_sign: f64,
}

impl GOperator {
    pub fn new(space: &SpatialSpace) -> Result<Self> {
        Self::build(space, 1.0)
    }

    /// `G` with the sign of the jump term reversed; a deliberately wrong operator
    /// used to check that the identity tests can fail.
    pub fn with_flipped_jump(space: &SpatialSpace) -> Result<Self> {
        Self::build(space, -1.0)
    }

    fn build(space: &SpatialSpace, jump_sign: f64) -> Result<Self> {
        if space.continuity() != Continuity::Discontinuous {
            return Err(Error::invalid("G is defined on discontinuous spaces"));
        }
        let n = space.local_dim();
        let basis = space.basis();
        let rule = policy_rule(2 * space.degree());
        let mut d = vec![0.0; n * n];
        for (x, w) in rule.iter() {
            let v = basis.values(x);
            let dv = basis.derivatives(x);
            for a in 0..n {
                for b in 0..n {
                    d[a * n + b] += w * v[a] * dv[b];
                }
            }
        }
        let at0 = basis.values(0.0);
        let at1 = basis.values(1.0);
        let half = 0.5 * jump_sign;
        let mut bp = vec![0.0; n * n];
        let mut bs = d.clone();
        let mut bn = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                bp[a * n + b] = -half * at0[a] * at1[b];
                bs[a * n + b] += half * at0[a] * at0[b] - half * at1[a] * at1[b];
                bn[a * n + b] = half * at1[a] * at0[b];
            }
        }
        let mref = DMatrix::from_row_slice(n, n, space.reference_mass());
        let minv = mref.try_inverse().ok_or_else(|| Error::Singular("reference mass".into()))?;
        let lift = |b: &[f64], h: f64| -> Vec<f64> {
            let bm = DMatrix::from_row_slice(n, n, b);
            let g = &minv * bm / h;
            let mut out = vec![0.0; n * n];
            for a in 0..n {
                for c in 0..n {
                    out[a * n + c] = g[(a, c)];
                }
            }
            out
        };
        let blocks = (0..space.element_count())
            .map(|e| {
                let h = space.partition().element_length(e);
                [lift(&bp, h), lift(&bs, h), lift(&bn, h)]
            })
            .collect();
        Ok(Self { space: space.clone(), blocks, jump_sign })
    }

    pub fn space(&self) -> &SpatialSpace {
        &self.space
    }

    pub fn jump_sign(&self) -> f64 {
        self.jump_sign
    }

    /// Local blocks `(previous, own, next)` of element `e`, row-major.
    pub fn element_blocks(&self, e: usize) -> &[Vec<f64>; 3] {
        &self.blocks[e]
    }

    /// Apply to one scalar component.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out);
        out
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let n = self.space.local_dim();
        let m = self.space.element_count();
        for e in 0..m {
            let nb = [(e + m - 1) % m, e, (e + 1) % m];
            for a in 0..n {
                let mut s = 0.0;
                for (blk, &f) in self.blocks[e].iter().zip(&nb) {
                    for b in 0..n {
                        s += blk[a * n + b] * u[f * n + b];
                    }
                }
                out[e * n + a] = s;
            }
        }
    }

    /// Apply componentwise to a component-major field.
    pub fn apply_components(&self, u: &[f64]) -> Vec<f64> {
        let ns = self.space.dof_count();
        let mut out = vec![0.0; u.len()];
        for (src, dst) in u.chunks(ns).zip(out.chunks_mut(ns)) {
            self.apply_into(src, dst);
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let ns = self.space.dof_count();
        let n = self.space.local_dim();
        let m = self.space.element_count();
        let mut g = DMatrix::zeros(ns, ns);
        for e in 0..m {
            let nb = [(e + m - 1) % m, e, (e + 1) % m];
            for (blk, &f) in self.blocks[e].iter().zip(&nb) {
                for a in 0..n {
                    for b in 0..n {
                        g[(e * n + a, f * n + b)] += blk[a * n + b];
                    }
                }
            }
        }
        g
    }
}

/// Elementwise exact derivative of a field, returned in the broken space of degree `p − 1`.
pub fn broken_derivative(space: &SpatialSpace, u: &[f64]) -> Result<(SpatialSpace, Vec<f64>)> {
    if space.degree() == 0 {
        return Err(Error::invalid("broken derivative needs degree p >= 1"));
    }
    let target = SpatialSpace::new(space.partition().clone(), space.degree() - 1, Continuity::Discontinuous)?;
    let ns = space.dof_count();
    let d = u.len() / ns;
    let nt = target.local_dim();
    let mut out = vec![0.0; d * target.dof_count()];
    for c in 0..d {
        let uc = &u[c * ns..(c + 1) * ns];
        for e in 0..space.element_count() {
            for (a, &xi) in target.basis().nodes().iter().enumerate() {
                out[c * target.dof_count() + target.dof(e, a)] = space.eval_local_derivative(uc, e, xi);
            }
        }
    }
    debug_assert_eq!(nt * space.element_count(), target.dof_count());
    Ok((target, out))
}

/// Trace combinations on the two end nodes of element `m` for fields `U`, `V`.
///
/// With `B_k = ½(U_k^- · V_k^+ + U_k^+ · V_k^-)`:
/// `∫_m G(U)·1 = avg_u_right − avg_u_left`,
/// `∫_m G(U)·V + U·G(V) = cross_right − cross_left`,
/// `∫_m G(U·V) = avg_uv_right − avg_uv_left`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalBoundaryTerms {
    pub avg_u_left: f64,
    pub avg_u_right: f64,
    pub cross_left: f64,
    pub cross_right: f64,
    pub avg_uv_left: f64,
    pub avg_uv_right: f64,
}

pub fn local_g_boundary_terms(space: &SpatialSpace, u: &[f64], v: &[f64], m: usize) -> LocalBoundaryTerms {
    let tu = [TraceValues::of_field(space, u, m), TraceValues::of_field(space, u, m + 1)];
    let tv = [TraceValues::of_field(space, v, m), TraceValues::of_field(space, v, m + 1)];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let sum = |a: &[f64]| a.iter().sum::<f64>();
    let cross = |i: usize| 0.5 * (dot(&tu[i].left_value, &tv[i].right_value) + dot(&tu[i].right_value, &tv[i].left_value));
    let avg_uv = |i: usize| 0.5 * (dot(&tu[i].left_value, &tv[i].left_value) + dot(&tu[i].right_value, &tv[i].right_value));
    LocalBoundaryTerms {
        avg_u_left: sum(&avg(&tu[0])),
        avg_u_right: sum(&avg(&tu[1])),
        cross_left: cross(0),
        cross_right: cross(1),
        avg_uv_left: avg_uv(0),
        avg_uv_right: avg_uv(1),
    }
}

/// Integral over element `m` of a scalar field (single component).
pub fn element_integral(space: &SpatialSpace, u: &[f64], m: usize) -> f64 {
    let rule = policy_rule(space.degree());
    let h = space.partition().element_length(m);
    rule.iter().map(|(xi, w)| h * w * space.eval_local(u, m, xi)).sum()
}

/// Integral over element `m` of `U · V` for component-major fields.
pub fn element_inner(space: &SpatialSpace, u: &[f64], v: &[f64], m: usize) -> f64 {
    let ns = space.dof_count();
    let rule = policy_rule(2 * space.degree());
    let h = space.partition().element_length(m);
    let d = u.len() / ns;
    let mut s = 0.0;
    for (xi, w) in rule.iter() {
        for c in 0..d {
            s += h * w * space.eval_local(&u[c * ns..(c + 1) * ns], m, xi) * space.eval_local(&v[c * ns..(c + 1) * ns], m, xi);
        }
    }
    s
}

/// `G(U·V)` for component-major DG fields, computed in the degree-2p broken space
/// where the product is represented exactly. Returns that space and the coefficients.
pub fn g_of_product(space: &SpatialSpace, u: &[f64], v: &[f64]) -> Result<(SpatialSpace, Vec<f64>)> {
    let wide = SpatialSpace::new(space.partition().clone(), 2 * space.degree(), Continuity::Discontinuous)?;
    let ns = space.dof_count();
    let d = u.len() / ns;
    let mut w = vec![0.0; wide.dof_count()];
    for e in 0..space.element_count() {
        for (a, &xi) in wide.basis().nodes().iter().enumerate() {
            w[wide.dof(e, a)] = (0..d)
                .map(|c| space.eval_local(&u[c * ns..(c + 1) * ns], e, xi) * space.eval_local(&v[c * ns..(c + 1) * ns], e, xi))
                .sum();
        }
    }
    let g = GOperator::new(&wide)?;
    let gw = g.apply(&w);
    Ok((wide, gw))
}

/// Residuals of the global and element-local identities of `G` for a pair of fields.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GIdentityResiduals {
    /// `|∫ G(U)|`
    pub orthogonality: f64,
    /// `|∫ G(U)V + U G(V)|`
    pub skew: f64,
    /// `|∫ G(UV) − (G(U)V + U G(V))|`
    pub product: f64,
    /// Largest element residual of `∫_e G(U) = {U}_{m+1} − {U}_m`.
    pub local_orthogonality: f64,
    /// Largest element residual of the local skew identity.
    pub local_skew: f64,
    /// Largest element residual of `∫_e G(UV) = {UV}_{m+1} − {UV}_m`.
    pub local_product: f64,
}

impl GIdentityResiduals {
    pub fn max(&self) -> f64 {
        [self.orthogonality, self.skew, self.product, self.local_orthogonality, self.local_skew, self.local_product]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Evaluates the identities with `g` (which may be a deliberately broken operator) against
/// the trace terms of `u` and `v`.
pub fn g_identity_residuals(g: &GOperator, u: &[f64], v: &[f64]) -> Result<GIdentityResiduals> {
    let s = g.space();
    if u.len() != s.dof_count() || v.len() != s.dof_count() {
        return Err(Error::invalid("fields do not match the operator's space"));
    }
    let (gu, gv) = (g.apply(u), g.apply(v));
    let (wide, guv) = g_of_product(s, u, v)?;
    let (mut orth, mut skew, mut prod) = (0.0, 0.0, 0.0);
    let mut r = GIdentityResiduals::default();
    for e in 0..s.element_count() {
        let t = local_g_boundary_terms(s, u, v, e);
        let ge = element_integral(s, &gu, e);
        let sk = element_inner(s, &gu, v, e) + element_inner(s, u, &gv, e);
        let gp = element_integral(&wide, &guv, e);
        r.local_orthogonality = r.local_orthogonality.max((ge - (t.avg_u_right - t.avg_u_left)).abs());
        r.local_skew = r.local_skew.max((sk - (t.cross_right - t.cross_left)).abs());
        r.local_product = r.local_product.max((gp - (t.avg_uv_right - t.avg_uv_left)).abs());
        orth += ge;
        skew += sk;
        prod += gp - sk;
    }
    r.orthogonality = orth.abs();
    r.skew = skew.abs();
    r.product = prod.abs();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::uniform_partition;
    use proptest::prelude::*;

    fn dg(m: usize, p: usize) -> SpatialSpace {
        SpatialSpace::new(uniform_partition(1.0, m, true).unwrap(), p, Continuity::Discontinuous).unwrap()
    }

    #[test]
    fn jump_avg_examples() {
        let t = TraceValues { node_index: 0, left_value: vec![2.0], right_value: vec![4.0] };
        assert_eq!(jump(&t), vec![-2.0]);
        assert_eq!(avg(&t), vec![3.0]);
        let c = TraceValues { node_index: 1, left_value: vec![1.5, -2.0], right_value: vec![1.5, -2.0] };
        assert_eq!(jump(&c), vec![0.0, 0.0]);
        assert_eq!(avg(&c), vec![1.5, -2.0]);
    }

    #[test]
    fn rejects_continuous_space() {
        let cg = SpatialSpace::new(uniform_partition(1.0, 4, true).unwrap(), 1, Continuity::Continuous).unwrap();
        assert!(GOperator::new(&cg).is_err());
    }

    #[test]
    fn constant_has_zero_derivative() {
        for p in 0..=3 {
            let s = dg(5, p);
            let g = GOperator::new(&s).unwrap();
            let u = vec![2.5; s.dof_count()];
            assert!(g.apply(&u).iter().all(|x| x.abs() < 1e-12), "p={p}");
        }
    }

    #[test]
    fn continuous_hat_gives_elementwise_slope() {
        // Hat function on M=4, p=1: peaks at x=0.25, zero elsewhere at nodes.
        let s = dg(4, 1);
        let g = GOperator::new(&s).unwrap();
        let nodal = [0.0, 1.0, 0.0, 0.0];
        let mut u = vec![0.0; 8];
        for e in 0..4 {
            u[s.dof(e, 0)] = nodal[e];
            u[s.dof(e, 1)] = nodal[(e + 1) % 4];
        }
        let gu = g.apply(&u);
        let slopes = [4.0, -4.0, 0.0, 0.0];
        for e in 0..4 {
            assert!((gu[s.dof(e, 0)] - slopes[e]).abs() < 1e-12);
            assert!((gu[s.dof(e, 1)] - slopes[e]).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_form_matches_apply() {
        let s = dg(4, 2);
        let g = GOperator::new(&s).unwrap();
        let u: Vec<f64> = (0..s.dof_count()).map(|i| (i as f64 * 1.3).sin()).collect();
        let a = g.apply(&u);
        let b = g.to_dense() * nalgebra::DVector::from_vec(u);
        for i in 0..a.len() {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_element_mesh() {
        let s = dg(1, 2);
        let g = GOperator::new(&s).unwrap();
        // weak form check against direct assembly of the defining identity
        let u = vec![0.3, -1.0, 2.0];
        let gu = g.apply(&u);
        let rule = policy_rule(4);
        for a in 0..3 {
            let lhs: f64 = rule.iter().map(|(x, w)| w * s.eval_local(&gu, 0, x) * s.basis().value(a, x)).sum();
            let ux: f64 = rule.iter().map(|(x, w)| w * s.eval_local_derivative(&u, 0, x) * s.basis().value(a, x)).sum();
            let jmp = s.eval_local(&u, 0, 1.0) - s.eval_local(&u, 0, 0.0);
            let phi_avg = 0.5 * (s.basis().value(a, 1.0) + s.basis().value(a, 0.0));
            assert!((lhs - (ux - jmp * phi_avg)).abs() < 1e-12);
        }
    }

    #[test]
    fn broken_derivative_examples() {
        let cg = SpatialSpace::new(uniform_partition(1.0, 4, true).unwrap(), 1, Continuity::Continuous).unwrap();
        let u = vec![0.0, 1.0, 1.0, 1.0];
        let (t, du) = broken_derivative(&cg, &u).unwrap();
        assert_eq!(t.degree(), 0);
        assert!((du[0] - 4.0).abs() < 1e-12);
        let (_, dc) = broken_derivative(&cg, &[2.0; 4]).unwrap();
        assert!(dc.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn broken_derivative_converges() {
        let tau = 2.0 * std::f64::consts::PI;
        let mut errs = Vec::new();
        for m in [8usize, 16, 32] {
            let s = SpatialSpace::new(uniform_partition(1.0, m, true).unwrap(), 2, Continuity::Continuous).unwrap();
            let u = s.l2_project(1, |x| vec![(tau * x).sin()]).unwrap();
            let (t, du) = broken_derivative(&s, &u).unwrap();
            let rule = policy_rule(17);
            let mut e2 = 0.0;
            for e in 0..m {
                let h = 1.0 / m as f64;
                for (xi, w) in rule.iter() {
                    let x = (e as f64 + xi) * h;
                    e2 += h * w * (t.eval_local(&du, e, xi) - tau * (tau * x).cos()).powi(2);
                }
            }
            errs.push(e2.sqrt());
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
        assert!(errs[2] < 0.3 * errs[1]);
    }

    #[test]
    fn local_terms_collapse_for_continuous_fields() {
        let s = dg(6, 2);
        let cg = SpatialSpace::new(uniform_partition(1.0, 6, true).unwrap(), 2, Continuity::Continuous).unwrap();
        let u = cg.to_discontinuous(&(0..12).map(|i| (i as f64).cos()).collect::<Vec<_>>(), &s).unwrap();
        let v = cg.to_discontinuous(&(0..12).map(|i| (i as f64 * 0.5).sin()).collect::<Vec<_>>(), &s).unwrap();
        for m in 0..6 {
            let t = local_g_boundary_terms(&s, &u, &v, m);
            let uv_left = s.eval_local(&u, m, 0.0) * s.eval_local(&v, m, 0.0);
            let uv_right = s.eval_local(&u, m, 1.0) * s.eval_local(&v, m, 1.0);
            assert!((t.cross_left - uv_left).abs() < 1e-13 && (t.cross_right - uv_right).abs() < 1e-13);
            assert!((t.avg_uv_left - uv_left).abs() < 1e-13);
        }
        let ones = vec![1.0; s.dof_count()];
        let t = local_g_boundary_terms(&s, &ones, &ones, 2);
        assert!((t.avg_u_right - t.avg_u_left).abs() < 1e-15);
    }

    fn random_field(n: usize, seed: u64) -> Vec<f64> {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_residuals_detect_flipped_jump() {
        let s = dg(8, 2);
        let n = s.dof_count();
        let (u, v) = (random_field(n, 3), random_field(n, 4));
        let good = g_identity_residuals(&GOperator::new(&s).unwrap(), &u, &v).unwrap();
        assert!(good.max() <= 1e-12, "{good:?}");
        let bad = g_identity_residuals(&GOperator::with_flipped_jump(&s).unwrap(), &u, &v).unwrap();
        assert!(bad.skew > 1e-8 && bad.local_skew > 1e-8, "{bad:?}");
        assert!(g_identity_residuals(&GOperator::new(&s).unwrap(), &u[1..], &v).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn g_identities(m in prop::sample::select(vec![4usize, 8]), p in 1usize..=3, seed in any::<u64>()) {
            let s = dg(m, p);
            let g = GOperator::new(&s).unwrap();
            let n = s.dof_count();
            let u = random_field(n, seed);
            let v = random_field(n, seed.wrapping_add(1));
            let (gu, gv) = (g.apply(&u), g.apply(&v));
            let mut orth = 0.0;
            let mut skew = 0.0;
            let (wide, guv) = g_of_product(&s, &u, &v).unwrap();
            let mut prod = 0.0;
            for e in 0..m {
                let t = local_g_boundary_terms(&s, &u, &v, e);
                let ge = element_integral(&s, &gu, e);
                prop_assert!((ge - (t.avg_u_right - t.avg_u_left)).abs() <= 1e-12);
                let sk = element_inner(&s, &gu, &v, e) + element_inner(&s, &u, &gv, e);
                prop_assert!((sk - (t.cross_right - t.cross_left)).abs() <= 1e-12);
                let gp = element_integral(&wide, &guv, e);
                prop_assert!((gp - (t.avg_uv_right - t.avg_uv_left)).abs() <= 1e-12);
                // local product rule
                prop_assert!(((gp + t.avg_uv_left - t.avg_uv_right) - (sk + t.cross_left - t.cross_right)).abs() <= 1e-12);
                orth += ge;
                skew += sk;
                prod += gp - sk;
            }
            prop_assert!(orth.abs() <= 1e-12);
            prop_assert!(skew.abs() <= 1e-12);
            prop_assert!(prod.abs() <= 1e-12);
        }

        #[test]
        fn flipped_jump_breaks_skew_symmetry(m in prop::sample::select(vec![4usize, 8]), p in 1usize..=3, seed in any::<u64>()) {
            let s = dg(m, p);
            let g = GOperator::with_flipped_jump(&s).unwrap();
            let n = s.dof_count();
            let u = random_field(n, seed);
            let v = random_field(n, seed ^ 0x5555);
            let (gu, gv) = (g.apply(&u), g.apply(&v));
            let skew: f64 = (0..m).map(|e| element_inner(&s, &gu, &v, e) + element_inner(&s, &u, &gv, e)).sum();
            prop_assert!(skew.abs() > 1e-8);
        }
    }
}
