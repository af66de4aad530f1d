//! Nodal Lagrange bases on the reference interval `[0, 1]`.

use crate::error::{Error, Result};

/// Lagrange basis of degree `r` on equispaced nodes. Degree 0 uses the midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis {
    nodes: Vec<f64>,
    // 1 / prod_{k != j} (x_j - x_k)
    scale: Vec<f64>,
}

impl LagrangeBasis {
    pub fn equispaced(degree: usize) -> Self {
        let nodes = if degree == 0 {
            vec![0.5]
        } else {
            (0..=degree).map(|j| j as f64 / degree as f64).collect()
        };
        Self::with_nodes(nodes).expect("equispaced nodes are distinct")
    }

    pub fn with_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid("basis needs at least one node"));
        }
        let mut scale = Vec::with_capacity(nodes.len());
        for (j, &xj) in nodes.iter().enumerate() {
            let mut prod = 1.0;
            for (k, &xk) in nodes.iter().enumerate() {
                if k != j {
                    prod *= xj - xk;
                }
            }
            if prod == 0.0 || !prod.is_finite() {
                return Err(Error::invalid("basis nodes must be distinct and finite"));
            }
            scale.push(1.0 / prod);
        }
        Ok(Self { nodes, scale })
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Value (`order == 0`) or first derivative (`order == 1`) of basis function `j` at `x`.
    pub fn eval(&self, j: usize, x: f64, order: usize) -> Result<f64> {
        if j >= self.nodes.len() {
            return Err(Error::invalid(format!(
                "basis index {j} out of range for degree {}",
                self.degree()
            )));
        }
        match order {
            0 => Ok(self.value(j, x)),
            1 => Ok(self.derivative(j, x)),
            _ => Err(Error::invalid(format!("derivative order {order} not supported"))),
        }
    }

    pub(crate) fn value(&self, j: usize, x: f64) -> f64 {
        let mut v = self.scale[j];
        for (k, &xk) in self.nodes.iter().enumerate() {
            if k != j {
                v *= x - xk;
            }
        }
        v
    }

    pub(crate) fn derivative(&self, j: usize, x: f64) -> f64 {
        let mut sum = 0.0;
        for (i, _) in self.nodes.iter().enumerate().filter(|&(i, _)| i != j) {
            let mut prod = 1.0;
            for (k, &xk) in self.nodes.iter().enumerate() {
                if k != j && k != i {
                    prod *= x - xk;
                }
            }
            sum += prod;
        }
        sum * self.scale[j]
    }

    /// All values at `x`.
    pub fn values(&self, x: f64) -> Vec<f64> {
        (0..self.len()).map(|j| self.value(j, x)).collect()
    }

    /// All first derivatives at `x`.
    pub fn derivatives(&self, x: f64) -> Vec<f64> {
        (0..self.len()).map(|j| self.derivative(j, x)).collect()
    }
}

/// Tabulated values and derivatives of a basis at the points of a rule.
#[derive(Debug, Clone)]
pub(crate) struct Tabulation {
    /// `phi[k][j]`: function `j` at point `k`.
    pub phi: Vec<Vec<f64>>,
    pub dphi: Vec<Vec<f64>>,
}

impl Tabulation {
    pub fn new(basis: &LagrangeBasis, points: &[f64]) -> Self {
        Self {
            phi: points.iter().map(|&x| basis.values(x)).collect(),
            dphi: points.iter().map(|&x| basis.derivatives(x)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_examples() {
        let b = LagrangeBasis::equispaced(1);
        assert_eq!(b.nodes(), &[0.0, 1.0]);
        assert!((b.eval(0, 0.25, 0).unwrap() - 0.75).abs() < 1e-15);
        for x in [0.0, 0.3, 1.0] {
            assert!((b.eval(0, x, 1).unwrap() + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_nodal() {
        let b = LagrangeBasis::equispaced(2);
        assert_eq!(b.eval(1, 0.5, 0).unwrap(), 1.0);
        assert!(b.eval(1, 0.0, 0).unwrap().abs() < 1e-15);
        assert!(b.eval(3, 0.5, 0).is_err());
        assert!(b.eval(0, 0.5, 2).is_err());
    }

    #[test]
    fn constant_basis() {
        let b = LagrangeBasis::equispaced(0);
        assert_eq!(b.nodes(), &[0.5]);
        assert_eq!(b.eval(0, 0.9, 0).unwrap(), 1.0);
        assert_eq!(b.eval(0, 0.9, 1).unwrap(), 0.0);
    }

    #[test]
    fn duplicate_nodes_rejected() {
        assert!(LagrangeBasis::with_nodes(vec![0.0, 0.0]).is_err());
        assert!(LagrangeBasis::with_nodes(vec![]).is_err());
    }

    #[test]
    fn kronecker_property() {
        for r in 0..=4 {
            let b = LagrangeBasis::equispaced(r);
            for (i, &xi) in b.nodes().iter().enumerate() {
                for j in 0..=r {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((b.eval(j, xi, 0).unwrap() - want).abs() < 1e-14);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(r in 0usize..=4, x in 0.0f64..=1.0) {
            let b = LagrangeBasis::equispaced(r);
            let s: f64 = b.values(x).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-13);
            let ds: f64 = b.derivatives(x).iter().sum();
            prop_assert!(ds.abs() < 1e-12);
        }

        #[test]
        fn derivative_matches_central_differences(r in 1usize..=4, j in 0usize..5, x in 0.05f64..0.95) {
            let b = LagrangeBasis::equispaced(r);
            let j = j % (r + 1);
            let h = 1e-6;
            let fd = (b.eval(j, x + h, 0).unwrap() - b.eval(j, x - h, 0).unwrap()) / (2.0 * h);
            let d = b.eval(j, x, 1).unwrap();
            prop_assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0), "fd={} d={}", fd, d);
        }
    }
}
