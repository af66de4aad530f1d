//! Multisymplectic problems `K z_t + L z_x = ∇S(z)` and the shipped instances.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hamiltonian density `S` with its gradient and Hessian.
pub trait Hamiltonian: Send + Sync {
    fn value(&self, z: &[f64]) -> f64;
    fn gradient(&self, z: &[f64], out: &mut [f64]);
    /// Row-major `D x D` Hessian.
    fn hessian(&self, z: &[f64], out: &mut [f64]);
    /// Polynomial degree of `∇S` in `z`; drives the quadrature choice.
    fn gradient_degree(&self) -> usize;
}

/// `S = ½v² − ½w² + (a/4)u⁴` for `z = (u, v, w)`.
#[derive(Debug, Clone, Copy)]
pub struct WaveHamiltonian {
    pub quartic: f64,
}

impl Hamiltonian for WaveHamiltonian {
    fn value(&self, z: &[f64]) -> f64 {
        0.5 * z[1] * z[1] - 0.5 * z[2] * z[2] + 0.25 * self.quartic * z[0].powi(4)
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        out[0] = self.quartic * z[0].powi(3);
        out[1] = z[1];
        out[2] = -z[2];
    }

    fn hessian(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        out[0] = 3.0 * self.quartic * z[0] * z[0];
        out[4] = 1.0;
        out[8] = -1.0;
    }

    fn gradient_degree(&self) -> usize {
        if self.quartic == 0.0 {
            1
        } else {
            3
        }
    }
}

/// `S = −⅛(u² + v²)² − ½(p² + q²)` for `z = (u, v, p, q)`.
#[derive(Debug, Clone, Copy)]
pub struct NlsHamiltonian;

impl Hamiltonian for NlsHamiltonian {
    fn value(&self, z: &[f64]) -> f64 {
        let r = z[0] * z[0] + z[1] * z[1];
        -0.125 * r * r - 0.5 * (z[2] * z[2] + z[3] * z[3])
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let r = z[0] * z[0] + z[1] * z[1];
        out[0] = -0.5 * z[0] * r;
        out[1] = -0.5 * z[1] * r;
        out[2] = -z[2];
        out[3] = -z[3];
    }

    fn hessian(&self, z: &[f64], out: &mut [f64]) {
        let (u, v) = (z[0], z[1]);
        out.iter_mut().for_each(|x| *x = 0.0);
        out[0] = -0.5 * (3.0 * u * u + v * v);
        out[1] = -u * v;
        out[4] = -u * v;
        out[5] = -0.5 * (u * u + 3.0 * v * v);
        out[10] = -1.0;
        out[15] = -1.0;
    }

    fn gradient_degree(&self) -> usize {
        3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    LinearWave,
    NonlinearWave,
    Nls,
    Custom,
}

impl ProblemKind {
    /// Wave problems carry `z = (u, u_t, u_x)` and `S(u, 0, 0)` is the potential.
    pub fn is_wave(self) -> bool {
        matches!(self, ProblemKind::LinearWave | ProblemKind::NonlinearWave)
    }
}

pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> Vec<f64> + Send + Sync>;
pub type SpaceFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub struct MultisymplecticProblem {
    label: String,
    kind: ProblemKind,
    dim: usize,
    k: Vec<f64>,
    l: Vec<f64>,
    hamiltonian: Arc<dyn Hamiltonian>,
    domain_length: f64,
    exact: Option<SpaceTimeFn>,
    initial: SpaceFn,
    component_names: Vec<String>,
}

impl fmt::Debug for MultisymplecticProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultisymplecticProblem")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("k", &self.k)
            .field("l", &self.l)
            .field("domain_length", &self.domain_length)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl MultisymplecticProblem {
    /// A problem with `K`, `L` given row-major. Initial data defaults to the exact
    /// solution at `t = 0` when one is supplied, and to zero otherwise.
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        k: Vec<f64>,
        l: Vec<f64>,
        hamiltonian: Arc<dyn Hamiltonian>,
        domain_length: f64,
        exact: Option<SpaceTimeFn>,
    ) -> crate::Result<Self> {
        if dim < 2 || k.len() != dim * dim || l.len() != dim * dim {
            return Err(crate::Error::invalid("K and L must be D x D with D >= 2"));
        }
        if !(domain_length > 0.0) {
            return Err(crate::Error::invalid("domain length must be positive"));
        }
        let initial: SpaceFn = match &exact {
            Some(f) => {
                let f = f.clone();
                Arc::new(move |x| f(0.0, x))
            }
            None => Arc::new(move |_| vec![0.0; dim]),
        };
        Ok(Self {
            label: label.into(),
            kind: ProblemKind::Custom,
            dim,
            k,
            l,
            hamiltonian,
            domain_length,
            exact,
            initial,
            component_names: (0..dim).map(|c| format!("z{c}")).collect(),
        })
    }

    pub fn with_initial(mut self, initial: SpaceFn) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_component_names(mut self, names: &[&str]) -> Self {
        assert_eq!(names.len(), self.dim);
        self.component_names = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_k(mut self, k: Vec<f64>) -> Self {
        assert_eq!(k.len(), self.dim * self.dim);
        self.k = k;
        self
    }

    fn with_kind(mut self, kind: ProblemKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn component_names(&self) -> &[String] {
        &self.component_names
    }

    /// Row-major `K`.
    pub fn k(&self) -> &[f64] {
        &self.k
    }

    /// Row-major `L`.
    pub fn l(&self) -> &[f64] {
        &self.l
    }

    pub fn k_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.k)
    }

    pub fn l_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.l)
    }

    pub fn hamiltonian(&self) -> &dyn Hamiltonian {
        self.hamiltonian.as_ref()
    }

    pub fn s(&self, z: &[f64]) -> f64 {
        self.hamiltonian.value(z)
    }

    pub fn grad_s(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.hamiltonian.gradient(z, &mut g);
        g
    }

    pub fn hess_s(&self, z: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim * self.dim];
        self.hamiltonian.hessian(z, &mut h);
        h
    }

    pub fn exact_solution(&self) -> Option<&SpaceTimeFn> {
        self.exact.as_ref()
    }

    pub fn exact(&self, t: f64, x: f64) -> Option<Vec<f64>> {
        self.exact.as_ref().map(|f| f(t, x))
    }

    pub fn initial(&self, x: f64) -> Vec<f64> {
        (self.initial)(x)
    }

    pub fn initial_fn(&self) -> &SpaceFn {
        &self.initial
    }

    /// `M v` for row-major `M` of this problem's dimension.
    #[inline]
    pub fn apply(m: &[f64], v: &[f64], out: &mut [f64]) {
        let d = v.len();
        for i in 0..d {
            out[i] = (0..d).map(|j| m[i * d + j] * v[j]).sum();
        }
    }

    /// `a · M b`.
    #[inline]
    pub fn form(m: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let d = a.len();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += a[i] * m[i * d + j] * b[j];
            }
        }
        s
    }
}

const WAVE_K: [f64; 9] = [0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
const WAVE_L: [f64; 9] = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0];

/// Harmonic travelling wave `u = ½ sin 2π(x + t)` with `v = u_t`, `w = u_x`.
pub fn harmonic_wave(t: f64, x: f64) -> Vec<f64> {
    let arg = 2.0 * PI * (x + t);
    vec![0.5 * arg.sin(), PI * arg.cos(), PI * arg.cos()]
}

/// `u_tt − u_xx = 0` on the unit periodic interval.
pub fn linear_wave() -> MultisymplecticProblem {
    MultisymplecticProblem::new(
        "linear-wave",
        3,
        WAVE_K.to_vec(),
        WAVE_L.to_vec(),
        Arc::new(WaveHamiltonian { quartic: 0.0 }),
        1.0,
        Some(Arc::new(harmonic_wave)),
    )
    .expect("valid problem")
    .with_component_names(&["u", "v", "w"])
    .with_kind(ProblemKind::LinearWave)
}

/// `u_tt − u_xx + u³ = 0` on the unit periodic interval, started from the harmonic wave.
pub fn nonlinear_wave() -> MultisymplecticProblem {
    MultisymplecticProblem::new(
        "nonlinear-wave",
        3,
        WAVE_K.to_vec(),
        WAVE_L.to_vec(),
        Arc::new(WaveHamiltonian { quartic: 1.0 }),
        1.0,
        None,
    )
    .expect("valid problem")
    .with_initial(Arc::new(|x| harmonic_wave(0.0, x)))
    .with_component_names(&["u", "v", "w"])
    .with_kind(ProblemKind::NonlinearWave)
}

pub const NLS_DOMAIN: f64 = 40.0;

/// Amplitude-2 soliton of `iψ_t + ψ_xx + ½|ψ|²ψ = 0` in real form `(u, v, u_x, v_x)`,
/// repeated periodically with period 40 and centred at `x = 0`.
pub fn nls_soliton(t: f64, x: f64) -> Vec<f64> {
    let x = x - NLS_DOMAIN * (x / NLS_DOMAIN).round();
    let sech = 1.0 / x.cosh();
    let (c, s) = (t.cos(), t.sin());
    let dx = -sech * x.tanh();
    vec![2.0 * c * sech, 2.0 * s * sech, 2.0 * c * dx, 2.0 * s * dx]
}

/// Cubic focusing Schrödinger equation in four-component real form on `[0, 40)`.
pub fn nls() -> MultisymplecticProblem {
    let mut k = vec![0.0; 16];
    k[1] = -1.0;
    k[4] = 1.0;
    let mut l = vec![0.0; 16];
    l[2] = 1.0;
    l[7] = 1.0;
    l[8] = -1.0;
    l[13] = -1.0;
    MultisymplecticProblem::new("nls", 4, k, l, Arc::new(NlsHamiltonian), NLS_DOMAIN, Some(Arc::new(nls_soliton)))
        .expect("valid problem")
        .with_component_names(&["u", "v", "p", "q"])
        .with_kind(ProblemKind::Nls)
}

/// Look up a shipped problem by label.
pub fn problem_by_label(label: &str) -> Option<MultisymplecticProblem> {
    match label {
        "linear-wave" => Some(linear_wave()),
        "nonlinear-wave" => Some(nonlinear_wave()),
        "nls" => Some(nls()),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_residual <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Check skew symmetry, derivative consistency of `S` and, when present, that the
/// exact solution satisfies the PDE.
pub fn validate(problem: &MultisymplecticProblem, seed: u64) -> ValidationReport {
    let d = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut skew = |name: &str, m: &[f64]| {
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((m[i * d + j] + m[j * d + i]).abs());
            }
        }
        checks.push(Check { name: name.into(), max_residual: worst, tolerance: 0.0 });
    };
    skew("k-skew", problem.k());
    skew("l-skew", problem.l());

    let mut grad_err = 0.0f64;
    let mut hess_err = 0.0f64;
    let mut hess_sym = 0.0f64;
    let h = 1e-6;
    for _ in 0..100 {
        let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = problem.grad_s(&z);
        let hs = problem.hess_s(&z);
        for i in 0..d {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (problem.s(&zp) - problem.s(&zm)) / (2.0 * h);
            grad_err = grad_err.max((fd - g[i]).abs() / g[i].abs().max(1.0));
            let (gp, gm) = (problem.grad_s(&zp), problem.grad_s(&zm));
            for j in 0..d {
                let fd = (gp[j] - gm[j]) / (2.0 * h);
                hess_err = hess_err.max((fd - hs[j * d + i]).abs() / hs[j * d + i].abs().max(1.0));
                hess_sym = hess_sym.max((hs[i * d + j] - hs[j * d + i]).abs());
            }
        }
    }
    checks.push(Check { name: "gradient".into(), max_residual: grad_err, tolerance: 1e-6 });
    checks.push(Check { name: "hessian".into(), max_residual: hess_err, tolerance: 1e-6 });
    checks.push(Check { name: "hessian-symmetry".into(), max_residual: hess_sym, tolerance: 0.0 });

    if problem.exact_solution().is_some() {
        let len = problem.domain_length();
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let t = rng.random_range(0.0..2.0);
            let x = rng.random_range(0.0..len);
            worst = worst.max(pde_residual(problem, t, x).expect("exact solution present"));
        }
        checks.push(Check { name: "exact-solution".into(), max_residual: worst, tolerance: 1e-8 });
    }
    ValidationReport { checks }
}

/// Max-norm of `K z_t + L z_x − ∇S(z)` for the exact solution, derivatives by
/// central differences with step 1e-5.
pub fn pde_residual(problem: &MultisymplecticProblem, t: f64, x: f64) -> Option<f64> {
    let f = problem.exact_solution()?;
    let h = 1e-5;
    let d = problem.dim();
    let z = f(t, x);
    let (tp, tm) = (f(t + h, x), f(t - h, x));
    let (xp, xm) = (f(t, x + h), f(t, x - h));
    let zt: Vec<f64> = (0..d).map(|c| (tp[c] - tm[c]) / (2.0 * h)).collect();
    let zx: Vec<f64> = (0..d).map(|c| (xp[c] - xm[c]) / (2.0 * h)).collect();
    let mut kz = vec![0.0; d];
    let mut lz = vec![0.0; d];
    MultisymplecticProblem::apply(problem.k(), &zt, &mut kz);
    MultisymplecticProblem::apply(problem.l(), &zx, &mut lz);
    let g = problem.grad_s(&z);
    Some((0..d).map(|c| (kz[c] + lz[c] - g[c]).abs()).fold(0.0, f64::max))
}
