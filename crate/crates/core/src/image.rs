//! Flat container for pixel images and transform-coefficient vectors.
//!
//! Everything downstream (kernels, proximal maps, optimisers) operates on
//! `&[f64]` slices; this type only pins down the geometry and which domain
//! the numbers live in so that operators cannot be fed the wrong kind of
//! vector by accident.

use crate::error::{Error, Result};

/// Geometry of a vector: a 1-D signal or a 2-D image stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    OneD(usize),
    TwoD { height: usize, width: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::OneD(n) => n,
            Shape::TwoD { height, width } => height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        match *self {
            Shape::OneD(n) => (1, n),
            Shape::TwoD { height, width } => (height, width),
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::OneD(n) => write!(f, "({n})"),
            Shape::TwoD { height, width } => write!(f, "({height}, {width})"),
        }
    }
}

/// Whether the entries are pixel intensities or coefficients in some
/// analysis/synthesis basis. Operators that only make sense in one domain
/// check this tag instead of silently producing garbage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    Pixel,
    Coefficient,
}

impl std::fmt::Display for DomainTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DomainTag::Pixel => write!(f, "pixel"),
            DomainTag::Coefficient => write!(f, "coefficient"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageVector {
    data: Vec<f64>,
    shape: Shape,
    domain_tag: DomainTag,
}

impl ImageVector {
    pub fn new(data: Vec<f64>, shape: Shape, domain_tag: DomainTag) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                context: "ImageVector::new",
                expected: format!("{} entries for shape {}", shape.len(), shape),
                actual: format!("{} entries", data.len()),
            });
        }
        Ok(Self { data, shape, domain_tag })
    }

    pub fn zeros(shape: Shape, domain_tag: DomainTag) -> Self {
        Self { data: vec![0.0; shape.len()], shape, domain_tag }
    }

    pub fn from_pixels(data: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        Self::new(data, Shape::TwoD { height, width }, DomainTag::Pixel)
    }

    pub fn from_coefficients(data: Vec<f64>, shape: Shape) -> Result<Self> {
        Self::new(data, shape, DomainTag::Coefficient)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn domain_tag(&self) -> DomainTag {
        self.domain_tag
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Replaces the contents, keeping shape and tag. Lengths must agree.
    pub fn set_data(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "ImageVector::set_data",
                expected: format!("{}", self.data.len()),
                actual: format!("{}", data.len()),
            });
        }
        self.data.copy_from_slice(data);
        Ok(())
    }

    /// Same numbers, different interpretation. Used when a synthesis
    /// operator maps coefficients into the pixel domain and vice versa.
    pub fn retag(mut self, domain_tag: DomainTag, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "ImageVector::retag",
                expected: format!("{} entries for shape {}", shape.len(), shape),
                actual: format!("{} entries", self.data.len()),
            });
        }
        self.shape = shape;
        self.domain_tag = domain_tag;
        Ok(self)
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Euclidean distance squared between two equal-length slices.
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Inner product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm of a slice.
pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = ImageVector::new(vec![0.0; 5], Shape::TwoD { height: 2, width: 3 }, DomainTag::Pixel);
        assert!(err.is_err());
    }

    #[test]
    fn shape_len_and_dims() {
        assert_eq!(Shape::OneD(7).len(), 7);
        assert_eq!(Shape::TwoD { height: 3, width: 4 }.len(), 12);
        assert_eq!(Shape::TwoD { height: 3, width: 4 }.dims(), (3, 4));
    }

    #[test]
    fn check_finite_flags_nan() {
        let mut v = ImageVector::zeros(Shape::OneD(3), DomainTag::Pixel);
        assert!(v.check_finite("test").is_ok());
        v.as_mut_slice()[1] = f64::NAN;
        assert!(v.check_finite("test").is_err());
    }

    #[test]
    fn retag_checks_length() {
        let v = ImageVector::zeros(Shape::OneD(6), DomainTag::Pixel);
        assert!(v.clone().retag(DomainTag::Coefficient, Shape::TwoD { height: 2, width: 3 }).is_ok());
        assert!(v.retag(DomainTag::Coefficient, Shape::OneD(5)).is_err());
    }
}
