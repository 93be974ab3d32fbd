//! Parameter layouts and flat parameter vectors.
//!
//! A layout is an ordered list of named, shaped entries packed contiguously
//! into one `f64` buffer. Task vectors, gradients, and optimizer moments all
//! share the layout of the parameters they refer to, which makes parameter
//! arithmetic a handful of checked vector operations.

use std::sync::Arc;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered, named, non-overlapping entries covering `0..total_len`.
#[derive(Debug, PartialEq)]
pub struct ParamLayout {
    entries: Vec<LayoutEntry>,
    total_len: usize,
}

impl ParamLayout {
    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn entry(&self, name: &str) -> Result<&LayoutEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CoreError::Layout(format!("no layout entry named {name:?}")))
    }
}

#[derive(Default)]
pub struct LayoutBuilder {
    entries: Vec<LayoutEntry>,
    offset: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize]) -> Result<&mut Self> {
        if shape.iter().product::<usize>() == 0 {
            return Err(CoreError::Layout(format!("entry {name:?} has empty shape {shape:?}")));
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(CoreError::Layout(format!("duplicate layout entry {name:?}")));
        }
        let entry = LayoutEntry { name: name.to_string(), shape: shape.to_vec(), offset: self.offset };
        self.offset += entry.len();
        self.entries.push(entry);
        Ok(self)
    }

    pub fn build(self) -> Arc<ParamLayout> {
        Arc::new(ParamLayout { entries: self.entries, total_len: self.offset })
    }
}

/// A flat parameter vector tied to a layout.
#[derive(Debug, Clone)]
pub struct ParamVector {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let n = layout.total_len();
        ParamVector { layout, values: vec![0.0; n] }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(CoreError::Layout(format!(
                "layout holds {} values, got {}",
                layout.total_len(),
                values.len()
            )));
        }
        Ok(ParamVector { layout, values })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn entry_slice(&self, name: &str) -> Result<&[f64]> {
        let e = self.layout.entry(name)?;
        Ok(&self.values[e.offset..e.offset + e.len()])
    }

    /// Layouts must match structurally for any cross-vector arithmetic.
    pub fn check_same_layout(&self, other: &ParamVector) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout {
            Ok(())
        } else {
            Err(CoreError::Layout("parameter vectors have different layouts".into()))
        }
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_same_layout(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(ParamVector { layout: self.layout.clone(), values })
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_same_layout(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(ParamVector { layout: self.layout.clone(), values })
    }

    pub fn scale(&self, k: f64) -> ParamVector {
        let values = self.values.iter().map(|v| v * k).collect();
        ParamVector { layout: self.layout.clone(), values }
    }

    /// `self += k * other`, in place.
    pub fn axpy(&mut self, k: f64, other: &ParamVector) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_same_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<ParamLayout> {
        let mut b = LayoutBuilder::new();
        b.add("w", &[2, 3]).unwrap();
        b.add("b", &[2]).unwrap();
        b.build()
    }

    #[test]
    fn offsets_are_contiguous() {
        let l = layout();
        assert_eq!(l.total_len(), 8);
        assert_eq!(l.entry("w").unwrap().offset, 0);
        assert_eq!(l.entry("b").unwrap().offset, 6);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut b = LayoutBuilder::new();
        b.add("w", &[2]).unwrap();
        assert!(b.add("w", &[3]).is_err());
    }

    #[test]
    fn mismatched_layout_arithmetic_fails() {
        let a = ParamVector::zeros(layout());
        let mut other = LayoutBuilder::new();
        other.add("w", &[4]).unwrap();
        let b = ParamVector::zeros(other.build());
        assert!(matches!(a.add(&b), Err(CoreError::Layout(_))));
    }

    #[test]
    fn axpy_matches_scale_add() {
        let l = layout();
        let a = ParamVector::from_values(l.clone(), (0..8).map(|i| i as f64).collect()).unwrap();
        let b = ParamVector::from_values(l, (0..8).map(|i| (i * i) as f64).collect()).unwrap();
        let mut c = a.clone();
        c.axpy(0.5, &b).unwrap();
        let d = a.add(&b.scale(0.5)).unwrap();
        assert_eq!(c.values(), d.values());
    }
}
