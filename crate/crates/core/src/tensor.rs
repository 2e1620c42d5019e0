//! Named, shaped 64-bit tensors: parameter sets and matching gradient sets.

use std::fmt;

use ndarray::{ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn numel(self) -> usize {
        match self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn rank(self) -> usize {
        match self {
            Shape::Vector(_) => 1,
            Shape::Matrix(..) => 2,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix(r, c) => write!(f, "[{r}, {c}]"),
        }
    }
}

/// Dense row-major tensor of rank 1 or 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Structure(format!(
                "{} values cannot fill shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::from_vec(Shape::Matrix(rows, cols), data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Matrix view; a vector is viewed as a single row.
    pub fn view2(&self) -> ArrayView2<'_, f64> {
        let (r, c) = dims2(self.shape);
        ArrayView2::from_shape((r, c), &self.data).expect("shape matches data")
    }

    pub fn view2_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let (r, c) = dims2(self.shape);
        ArrayViewMut2::from_shape((r, c), &mut self.data).expect("shape matches data")
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

fn dims2(shape: Shape) -> (usize, usize) {
    match shape {
        Shape::Vector(n) => (1, n),
        Shape::Matrix(r, c) => (r, c),
    }
}

/// Routing tag: Muon updates `Hidden` matrices, everything else goes to its
/// auxiliary optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Hidden,
    Other,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub role: Role,
    pub value: Tensor,
}

/// Ordered collection of uniquely named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, role: Role, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::Structure(format!("duplicate parameter name `{name}`")));
        }
        self.params.push(Param { name, role, value });
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, role: Role, value: Tensor) -> Result<Self> {
        self.push(name, role, value)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// All values concatenated in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }
}

/// Gradients keyed exactly like a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        GradSet {
            names: params.iter().map(|p| p.name.clone()).collect(),
            tensors: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn from_parts(entries: Vec<(String, Tensor)>) -> Self {
        let (names, tensors) = entries.into_iter().unzip();
        GradSet { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Fails unless names, order and shapes match `params` exactly.
    pub fn check_matches(&self, params: &ParamSet) -> Result<()> {
        if self.len() != params.len() {
            return Err(Error::Structure(format!(
                "{} gradient tensors for {} parameters",
                self.len(),
                params.len()
            )));
        }
        for ((name, g), p) in self.iter().zip(params.iter()) {
            if name != p.name {
                return Err(Error::Structure(format!(
                    "gradient `{name}` where `{}` was expected",
                    p.name
                )));
            }
            if g.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    name: name.to_string(),
                    expected: p.value.shape().to_string(),
                    got: g.shape().to_string(),
                });
            }
        }
        Ok(())
    }

    /// Fails unless names and shapes match `other`.
    pub fn check_same_layout(&self, other: &GradSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Structure("gradient sets have different keys".into()));
        }
        for ((name, a), b) in self.iter().zip(other.tensors.iter()) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    name: name.to_string(),
                    expected: a.shape().to_string(),
                    got: b.shape().to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }

    /// `self += c * other`; layouts must already match.
    pub fn add_scaled(&mut self, other: &GradSet, c: f64) {
        for (a, b) in self.tensors.iter_mut().zip(other.tensors.iter()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += c * y;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.push("w", Role::Hidden, Tensor::zeros(Shape::Matrix(2, 2)))
            .unwrap();
        assert!(p.push("w", Role::Other, Tensor::zeros(Shape::Vector(2))).is_err());
    }

    #[test]
    fn grad_layout_checks() {
        let p = ParamSet::new()
            .with("w", Role::Hidden, Tensor::zeros(Shape::Matrix(2, 3)))
            .unwrap()
            .with("g", Role::Other, Tensor::zeros(Shape::Vector(3)))
            .unwrap();
        let g = GradSet::zeros_like(&p);
        g.check_matches(&p).unwrap();

        let bad = GradSet::from_parts(vec![
            ("w".into(), Tensor::zeros(Shape::Matrix(3, 2))),
            ("g".into(), Tensor::zeros(Shape::Vector(3))),
        ]);
        assert!(matches!(bad.check_matches(&p), Err(Error::ShapeMismatch { .. })));
        let swapped = GradSet::from_parts(vec![
            ("g".into(), Tensor::zeros(Shape::Vector(3))),
            ("w".into(), Tensor::zeros(Shape::Matrix(2, 3))),
        ]);
        assert!(matches!(swapped.check_matches(&p), Err(Error::Structure(_))));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::matrix(2, 2, vec![1.0; 3]).is_err());
        let t = Tensor::matrix(2, 3, (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.view2()[[1, 0]], 3.0);
    }
}
