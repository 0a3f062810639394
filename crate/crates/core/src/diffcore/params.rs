use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Declared shape of one named parameter block. Vectors have `cols == 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_bias(&self) -> bool {
        self.cols == 1 && self.name.ends_with(".b")
    }

    /// Leading component of the dotted name, e.g. `encoder` for `encoder.cell.w_x`.
    pub fn group(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }
}

/// Shape metadata shared by a [`ParamTree`] and every tree derived from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    specs: Vec<ParamSpec>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn range(&self, id: ParamId) -> std::ops::Range<usize> {
        let start = self.offsets[id.0];
        start..start + self.specs[id.0].len()
    }

    pub fn spec(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }
}

/// Handle to a parameter block inside a [`ParamTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Collects parameter declarations, then freezes them into a tree.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.specs.iter().all(|s| s.name != name),
            "duplicate parameter {name}"
        );
        self.specs.push(ParamSpec { name, rows, cols });
        ParamId(self.specs.len() - 1)
    }

    pub fn finish(self) -> Arc<Layout> {
        let mut offsets = Vec::with_capacity(self.specs.len());
        let mut total = 0;
        for s in &self.specs {
            offsets.push(total);
            total += s.len();
        }
        Arc::new(Layout {
            specs: self.specs,
            offsets,
            total,
        })
    }
}

/// Named groups of trainable matrices and vectors stored in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTree {
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl ParamTree {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![0.0; layout.total];
        Self { layout, data }
    }

    /// Uniform initialization in `±1/sqrt(fan_in)` for every block, where
    /// `fan_in` is the column count of the matching weight matrix. Biases
    /// (names ending in `.b`) use the fan-in of the matrix declared just
    /// before them.
    pub fn init_uniform<R: Rng + ?Sized>(layout: Arc<Layout>, rng: &mut R) -> Self {
        let mut tree = Self::zeros(layout);
        let mut last_fan_in = 1usize;
        for i in 0..tree.layout.specs.len() {
            let spec = &tree.layout.specs[i];
            let fan_in = if spec.is_bias() {
                last_fan_in
            } else {
                last_fan_in = spec.cols;
                spec.cols
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let range = tree.layout.range(ParamId(i));
            for v in &mut tree.data[range] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        tree
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[self.layout.range(id)]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let r = self.layout.range(id);
        &mut self.data[r]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let id = self.layout.find(name)?;
        Some(self.get_mut(id))
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn flatten(&self) -> &[f64] {
        &self.data
    }

    pub fn flatten_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Builds a tree with this tree's layout from a flat vector.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        Self::from_flat(self.layout.clone(), flat.to_vec())
    }

    pub fn from_flat(layout: Arc<Layout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total {
            return Err(Error::ShapeMismatch(format!(
                "flat vector has {} entries, layout needs {}",
                data.len(),
                layout.total
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(Self { layout, data })
    }

    pub fn is_congruent(&self, grads: &GradTree) -> bool {
        Arc::ptr_eq(&self.layout, &grads.layout) || *self.layout == *grads.layout
    }
}

/// Partial derivatives of a scalar with the same layout as a [`ParamTree`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradTree {
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl GradTree {
    pub fn zeros_like(params: &ParamTree) -> Self {
        Self {
            layout: params.layout.clone(),
            data: vec![0.0; params.data.len()],
        }
    }

    pub(crate) fn from_parts(layout: Arc<Layout>, data: Vec<f64>) -> Self {
        debug_assert_eq!(layout.total, data.len());
        Self { layout, data }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[self.layout.range(id)]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|id| self.get(id))
    }

    pub fn flatten(&self) -> &[f64] {
        &self.data
    }

    pub fn flatten_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += scale * other`
    pub fn accumulate(&mut self, other: &GradTree, scale: f64) -> Result<()> {
        if self.data.len() != other.data.len() {
            return Err(Error::ShapeMismatch("gradient trees differ in size".into()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sum of squared entries per top-level group (`encoder`, `dynamics`, ...).
    pub fn group_norms(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for (i, spec) in self.layout.specs.iter().enumerate() {
            let sq: f64 = self.get(ParamId(i)).iter().map(|v| v * v).sum();
            match out.iter_mut().find(|(g, _)| g == spec.group()) {
                Some((_, acc)) => *acc += sq,
                None => out.push((spec.group().to_string(), sq)),
            }
        }
        out.into_iter().map(|(g, s)| (g, s.sqrt())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn layout() -> Arc<Layout> {
        let mut b = LayoutBuilder::new();
        b.add("encoder.w", 3, 2);
        b.add("encoder.b", 3, 1);
        b.add("decoder.w", 1, 4);
        b.finish()
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let tree = ParamTree::init_uniform(layout(), &mut rng);
        let bound2 = 1.0 / 2f64.sqrt();
        assert!(tree.by_name("encoder.w").unwrap().iter().all(|v| v.abs() <= bound2));
        assert!(tree.by_name("encoder.b").unwrap().iter().all(|v| v.abs() <= bound2));
        assert!(tree.by_name("decoder.w").unwrap().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let tree = ParamTree::zeros(layout());
        assert!(tree.unflatten(&[0.0; 3]).is_err());
        assert!(tree.unflatten(&[f64::NAN; 13]).is_err());
    }

    #[test]
    fn group_norms_split_by_prefix() {
        let tree = ParamTree::zeros(layout());
        let mut g = GradTree::zeros_like(&tree);
        g.flatten_mut()[0] = 3.0;
        g.flatten_mut()[12] = 4.0;
        let norms = g.group_norms();
        assert_eq!(norms, vec![("encoder".into(), 3.0), ("decoder".into(), 4.0)]);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trip(v in proptest::collection::vec(-1e6f64..1e6, 13)) {
            let tree = ParamTree::zeros(layout());
            let back = tree.unflatten(&v).unwrap();
            prop_assert_eq!(back.flatten(), &v[..]);
        }
    }
}
