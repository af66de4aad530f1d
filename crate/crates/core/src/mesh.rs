//! One-dimensional partitions of an interval, optionally periodic.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Partition1D {
    nodes: Vec<f64>,
    periodic: bool,
}

impl Partition1D {
    /// Build a partition from strictly increasing node coordinates.
    pub fn from_nodes(nodes: Vec<f64>, periodic: bool) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("a partition needs at least two nodes"));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("partition nodes must be finite"));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("partition nodes must be strictly increasing"));
        }
        Ok(Self { nodes, periodic })
    }

    pub fn node_coords(&self) -> &[f64] {
        &self.nodes
    }

    pub fn element_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn total_length(&self) -> f64 {
        self.nodes[self.nodes.len() - 1] - self.nodes[0]
    }

    /// Left end point of element `e`.
    pub fn element_start(&self, e: usize) -> f64 {
        self.nodes[e]
    }

    pub fn element_length(&self, e: usize) -> f64 {
        self.nodes[e + 1] - self.nodes[e]
    }

    /// Locate the element containing `x` and the reference coordinate in `[0, 1]`.
    ///
    /// Periodic partitions wrap `x` into the domain first. Points on an interior
    /// node are assigned to the element on their right.
    pub fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let (a, b) = (self.start(), self.nodes[self.nodes.len() - 1]);
        let x = if self.periodic {
            let len = b - a;
            let mut y = (x - a).rem_euclid(len) + a;
            if y >= b {
                y = a;
            }
            y
        } else {
            if x < a || x > b {
                return Err(Error::invalid(format!("point {x} outside [{a}, {b}]")));
            }
            x
        };
        let e = match self
            .nodes
            .binary_search_by(|probe| probe.partial_cmp(&x).expect("finite nodes"))
        {
            Ok(i) => i.min(self.element_count() - 1),
            Err(i) => i - 1,
        };
        let xi = ((x - self.nodes[e]) / self.element_length(e)).clamp(0.0, 1.0);
        Ok((e, xi))
    }
}

/// Partition `[0, length]` into `count` equal elements.
pub fn uniform_partition(length: f64, count: usize, periodic: bool) -> Result<Partition1D> {
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::invalid(format!("partition length must be positive, got {length}")));
    }
    if count == 0 {
        return Err(Error::invalid("partition needs at least one element"));
    }
    let h = length / count as f64;
    let mut nodes: Vec<f64> = (0..=count).map(|i| i as f64 * h).collect();
    nodes[count] = length;
    Partition1D::from_nodes(nodes, periodic)
}
