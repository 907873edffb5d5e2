//! Gauss quadrature on the quad4 parent element `[-1, 1]²`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub xi: f64,
    pub eta: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    points: Vec<QuadPoint>,
}

impl QuadratureRule {
    /// 2x2 Gauss rule, exact for bilinear geometry.
    pub fn gauss_2x2() -> Self {
        let g = 1.0 / 3.0f64.sqrt();
        let mut points = Vec::with_capacity(4);
        for eta in [-g, g] {
            for xi in [-g, g] {
                points.push(QuadPoint {
                    xi,
                    eta,
                    weight: 1.0,
                });
            }
        }
        QuadratureRule { points }
    }

    pub fn new(points: Vec<QuadPoint>) -> Result<Self> {
        let rule = QuadratureRule { points };
        rule.validate()?;
        Ok(rule)
    }

    pub fn points(&self) -> &[QuadPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Weights must sum to the parent-element area (4).
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.points.iter().map(|p| p.weight).sum();
        if (total - 4.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "quadrature weights sum to {total}, expected 4"
            )));
        }
        Ok(())
    }
}
