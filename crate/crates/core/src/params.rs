//! Learnable tensors of the model and their gradients.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{DsieError, Result};

/// Shape hyperparameters fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub items: usize,
    pub dim: usize,
    pub layers: usize,
    pub interests: usize,
}

/// Names every tensor in [`ModelParams`].
///
/// Layer-indexed variants belong to the residual self-attention stack and
/// take a zero-based layer index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    ItemEmbeddings,
    ReadoutHidden,
    ReadoutScore,
    Prototypes,
    AssignProjection,
    AssignNormGain,
    AssignNormBias,
    PrototypeNormGain,
    PrototypeNormBias,
    PositionHidden,
    PositionHiddenBias,
    PositionOut,
    PositionOutBias,
    GuideHidden,
    GuideOut,
    InterestBias,
    InterestNormGain,
    InterestNormBias,
    Query(usize),
    Key(usize),
    Value(usize),
    Residual(usize),
    ResidualBias(usize),
}

const FIXED: [Param; 18] = [
    Param::ItemEmbeddings,
    Param::ReadoutHidden,
    Param::ReadoutScore,
    Param::Prototypes,
    Param::AssignProjection,
    Param::AssignNormGain,
    Param::AssignNormBias,
    Param::PrototypeNormGain,
    Param::PrototypeNormBias,
    Param::PositionHidden,
    Param::PositionHiddenBias,
    Param::PositionOut,
    Param::PositionOutBias,
    Param::GuideHidden,
    Param::GuideOut,
    Param::InterestBias,
    Param::InterestNormGain,
    Param::InterestNormBias,
];
const PER_LAYER: usize = 5;

impl Param {
    pub fn slot(self) -> usize {
        match self {
            Param::Query(s) => FIXED.len() + PER_LAYER * s,
            Param::Key(s) => FIXED.len() + PER_LAYER * s + 1,
            Param::Value(s) => FIXED.len() + PER_LAYER * s + 2,
            Param::Residual(s) => FIXED.len() + PER_LAYER * s + 3,
            Param::ResidualBias(s) => FIXED.len() + PER_LAYER * s + 4,
            p => FIXED.iter().position(|&f| f == p).expect("fixed param"),
        }
    }

    fn from_slot(slot: usize) -> Param {
        if slot < FIXED.len() {
            return FIXED[slot];
        }
        let s = (slot - FIXED.len()) / PER_LAYER;
        match (slot - FIXED.len()) % PER_LAYER {
            0 => Param::Query(s),
            1 => Param::Key(s),
            2 => Param::Value(s),
            3 => Param::Residual(s),
            _ => Param::ResidualBias(s),
        }
    }

    pub fn name(self) -> String {
        match self {
            Param::ItemEmbeddings => "item_embeddings".into(),
            Param::ReadoutHidden => "readout.hidden".into(),
            Param::ReadoutScore => "readout.score".into(),
            Param::Prototypes => "prototypes".into(),
            Param::AssignProjection => "assign.projection".into(),
            Param::AssignNormGain => "assign.norm.gain".into(),
            Param::AssignNormBias => "assign.norm.bias".into(),
            Param::PrototypeNormGain => "prototype.norm.gain".into(),
            Param::PrototypeNormBias => "prototype.norm.bias".into(),
            Param::PositionHidden => "position.hidden".into(),
            Param::PositionHiddenBias => "position.hidden.bias".into(),
            Param::PositionOut => "position.out".into(),
            Param::PositionOutBias => "position.out.bias".into(),
            Param::GuideHidden => "guide.hidden".into(),
            Param::GuideOut => "guide.out".into(),
            Param::InterestBias => "interest.bias".into(),
            Param::InterestNormGain => "interest.norm.gain".into(),
            Param::InterestNormBias => "interest.norm.bias".into(),
            Param::Query(s) => format!("layer{s}.query"),
            Param::Key(s) => format!("layer{s}.key"),
            Param::Value(s) => format!("layer{s}.value"),
            Param::Residual(s) => format!("layer{s}.residual"),
            Param::ResidualBias(s) => format!("layer{s}.residual.bias"),
        }
    }

    /// Expected (rows, cols) for this tensor.
    pub fn shape(self, dims: &Dims) -> (usize, usize) {
        let d = dims.dim;
        let k = dims.interests;
        match self {
            Param::ItemEmbeddings => (dims.items, d),
            Param::ReadoutHidden => (dims.layers * d, d),
            Param::ReadoutScore => (d, 1),
            Param::Prototypes => (k, d),
            Param::AssignProjection => (d, d),
            Param::AssignNormGain
            | Param::AssignNormBias
            | Param::PrototypeNormGain
            | Param::PrototypeNormBias
            | Param::InterestNormGain
            | Param::InterestNormBias => (1, d),
            Param::PositionHidden => (d, 4 * d),
            Param::PositionHiddenBias => (1, 4 * d),
            Param::PositionOut => (4 * d, k),
            Param::PositionOutBias => (1, k),
            Param::GuideHidden => (2 * d, d),
            Param::GuideOut => (d, 1),
            Param::InterestBias => (k, d),
            Param::Query(_) | Param::Key(_) | Param::Value(_) | Param::Residual(_) => (d, d),
            Param::ResidualBias(_) => (1, d),
        }
    }

    fn init(self) -> Init {
        match self {
            Param::AssignNormGain | Param::PrototypeNormGain | Param::InterestNormGain => Init::Ones,
            Param::AssignNormBias
            | Param::PrototypeNormBias
            | Param::InterestNormBias
            | Param::PositionHiddenBias
            | Param::PositionOutBias
            | Param::InterestBias
            | Param::ResidualBias(_) => Init::Zeros,
            _ => Init::Uniform,
        }
    }
}

enum Init {
    Zeros,
    Ones,
    Uniform,
}

/// Every learnable tensor, stored row-major as `f64` matrices. Vectors are
/// kept as single-row (biases, norm affine terms) or single-column
/// (attention score projections) matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: Dims,
    tensors: Vec<Array2<f64>>,
}

impl ModelParams {
    pub fn new<R: Rng + ?Sized>(dims: Dims, rng: &mut R) -> Result<Self> {
        if dims.items == 0 || dims.dim == 0 || dims.layers == 0 || dims.interests == 0 {
            return Err(DsieError::invalid(format!(
                "all model dimensions must be positive: {dims:?}"
            )));
        }
        let scale = 1.0 / (dims.dim as f64).sqrt();
        let uniform = Uniform::new_inclusive(-scale, scale).expect("finite scale");
        let tensors = Self::layout(&dims)
            .map(|p| {
                let (r, c) = p.shape(&dims);
                match p.init() {
                    Init::Zeros => Array2::zeros((r, c)),
                    Init::Ones => Array2::ones((r, c)),
                    Init::Uniform => Array2::from_shape_fn((r, c), |_| uniform.sample(rng)),
                }
            })
            .collect();
        Ok(ModelParams { dims, tensors })
    }

    /// Builds params from named tensors, checking names and shapes.
    pub fn from_tensors(dims: Dims, named: Vec<(String, Array2<f64>)>) -> Result<Self> {
        let layout: Vec<Param> = Self::layout(&dims).collect();
        if named.len() != layout.len() {
            return Err(DsieError::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(layout.len());
        for (p, (name, t)) in layout.into_iter().zip(named) {
            if p.name() != name {
                return Err(DsieError::Checkpoint(format!(
                    "expected tensor {}, found {name}",
                    p.name()
                )));
            }
            if t.dim() != p.shape(&dims) {
                return Err(DsieError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.dim(),
                    p.shape(&dims)
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(DsieError::Checkpoint(format!("tensor {name} is not finite")));
            }
            tensors.push(t);
        }
        Ok(ModelParams { dims, tensors })
    }

    pub fn layout(dims: &Dims) -> impl Iterator<Item = Param> {
        let total = FIXED.len() + PER_LAYER * dims.layers;
        (0..total).map(Param::from_slot)
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn get(&self, p: Param) -> &Array2<f64> {
        &self.tensors[p.slot()]
    }

    pub fn get_mut(&mut self, p: Param) -> &mut Array2<f64> {
        &mut self.tensors[p.slot()]
    }

    pub(crate) fn slot(&self, slot: usize) -> &Array2<f64> {
        &self.tensors[slot]
    }

    pub fn item_embeddings(&self) -> &Array2<f64> {
        self.get(Param::ItemEmbeddings)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Param, &Array2<f64>)> {
        Self::layout(&self.dims).zip(self.tensors.iter())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Gradient accumulator shaped like [`ModelParams`].
///
/// Item-embedding gradients arrive either densely (when the whole table is
/// used as a leaf) or as sparse rows from lookups; both are kept and merged
/// on read.
#[derive(Debug, Clone)]
pub struct Grads {
    dense: Vec<Option<Array2<f64>>>,
    rows: BTreeMap<usize, Array1<f64>>,
}

impl Grads {
    pub fn new(tensors: usize) -> Self {
        Grads {
            dense: vec![None; tensors],
            rows: BTreeMap::new(),
        }
    }

    pub(crate) fn add_dense(&mut self, slot: usize, g: &Array2<f64>) {
        match &mut self.dense[slot] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub(crate) fn add_row(&mut self, row: usize, g: ndarray::ArrayView1<f64>) {
        match self.rows.get_mut(&row) {
            Some(acc) => *acc += &g,
            None => {
                self.rows.insert(row, g.to_owned());
            }
        }
    }

    pub fn merge(&mut self, other: &Grads) {
        for (slot, g) in other.dense.iter().enumerate() {
            if let Some(g) = g {
                self.add_dense(slot, g);
            }
        }
        for (&row, g) in &other.rows {
            self.add_row(row, g.view());
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.dense.iter_mut().flatten() {
            *g *= factor;
        }
        for g in self.rows.values_mut() {
            *g *= factor;
        }
    }

    /// Dense gradient for one tensor, zeros where nothing flowed.
    pub fn get(&self, params: &ModelParams, p: Param) -> Array2<f64> {
        let slot = p.slot();
        let mut out = match &self.dense[slot] {
            Some(g) => g.clone(),
            None => Array2::zeros(params.slot(slot).dim()),
        };
        if p == Param::ItemEmbeddings {
            for (&row, g) in &self.rows {
                let mut r = out.row_mut(row);
                r += g;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.dense.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
            && self.rows.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Adam with bias correction over every tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        let zeros: Vec<Array2<f64>> = params.tensors.iter().map(|t| Array2::zeros(t.dim())).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Grads) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let lr = self.learning_rate * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step));
        let layout: Vec<Param> = ModelParams::layout(&params.dims).collect();
        for (slot, p) in layout.into_iter().enumerate() {
            let g = grads.get(params, p);
            let m = &mut self.first[slot];
            let v = &mut self.second[slot];
            Zip::from(&mut params.tensors[slot])
                .and(m)
                .and(v)
                .and(&g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * *m / (v.sqrt() + eps);
                });
        }
    }
}
