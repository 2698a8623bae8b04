//! Local-scale multi-interest extraction.
//!
//! Items are softly assigned to K intention prototypes, weighted by a
//! per-prototype position profile and by their relevance to the inherent
//! preference, then pooled into K layer-normalized interest vectors.

use ndarray::{Array1, Array2};

use crate::encoder::SequenceEmbedding;
use crate::graph::{Graph, Var};
use crate::params::{ModelParams, Param};

/// K interest vectors with the weights that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct InterestSet {
    /// `K×d`, row k is the k-th interest.
    pub interests: Array2<f64>,
    /// `K×L`, column-stochastic over prototypes at real positions.
    pub assignment: Array2<f64>,
    /// `K×L`, row-stochastic over real positions.
    pub position: Array2<f64>,
    /// Relevance to the preference per position, zero at pads.
    pub guide: Array1<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct InterestNodes {
    pub assignment: Var,
    pub position: Var,
    pub guide: Var,
    pub interests: Var,
}

/// `K×L` prototype assignment probabilities.
pub fn build_assignment(g: &mut Graph, embedded: Var, mask: &[bool]) -> Var {
    let k = g.params().dims().interests;
    let w = g.param(Param::AssignProjection);
    let proj = g.matmul(embedded, w);
    let gain1 = g.param(Param::AssignNormGain);
    let bias1 = g.param(Param::AssignNormBias);
    let items = g.layer_norm(proj, gain1, bias1);
    let c = g.param(Param::Prototypes);
    let gain2 = g.param(Param::PrototypeNormGain);
    let bias2 = g.param(Param::PrototypeNormBias);
    let protos = g.layer_norm(c, gain2, bias2);
    let logits = g.matmul_t(items, protos);
    let probs = g.softmax_rows(logits, &vec![true; k]);
    let probs = g.mask_rows(probs, mask);
    g.transpose(probs)
}

/// `K×L` position weights, softmax over real positions per prototype.
pub fn build_position_weights(g: &mut Graph, embedded: Var, mask: &[bool]) -> Var {
    let w1 = g.param(Param::PositionHidden);
    let b1 = g.param(Param::PositionHiddenBias);
    let w2 = g.param(Param::PositionOut);
    let b2 = g.param(Param::PositionOutBias);
    let z = g.matmul(embedded, w1);
    let z = g.add_row(z, b1);
    let z = g.relu(z);
    let z = g.matmul(z, w2);
    let z = g.add_row(z, b2);
    let z = g.transpose(z);
    g.softmax_rows(z, mask)
}

/// `L×1` preference-guided relevance in (0, 1), zero at pads.
pub fn build_guided_attention(g: &mut Graph, embedded: Var, preference: Var, mask: &[bool]) -> Var {
    let rows = g.shape(embedded).0;
    let pref = g.repeat_rows(preference, rows);
    let joint = g.concat_cols(&[embedded, pref]);
    let w1 = g.param(Param::GuideHidden);
    let w2 = g.param(Param::GuideOut);
    let z = g.matmul(joint, w1);
    let z = g.tanh(z);
    let z = g.matmul(z, w2);
    let a = g.sigmoid(z);
    g.mask_rows(a, mask)
}

/// `K×d` interests from the three weightings; `guide` is `L×1`.
pub fn build_interests(g: &mut Graph, embedded: Var, assignment: Var, position: Var, guide: Var) -> Var {
    let weights = g.mul(assignment, position);
    let guide_row = g.transpose(guide);
    let weights = g.mul_row(weights, guide_row);
    let pooled = g.matmul(weights, embedded);
    let bias = g.param(Param::InterestBias);
    let pooled = g.add(pooled, bias);
    let gain = g.param(Param::InterestNormGain);
    let nbias = g.param(Param::InterestNormBias);
    g.layer_norm(pooled, gain, nbias)
}

/// Full local extraction. With `preference = None` the guided attention is
/// fixed to 1 at real positions (global scale disabled).
pub fn build_extraction(g: &mut Graph, embedded: Var, preference: Option<Var>, mask: &[bool]) -> InterestNodes {
    let assignment = build_assignment(g, embedded, mask);
    let position = build_position_weights(g, embedded, mask);
    let guide = match preference {
        Some(p) => build_guided_attention(g, embedded, p, mask),
        None => {
            let ones = Array2::from_shape_fn((mask.len(), 1), |(i, _)| if mask[i] { 1.0 } else { 0.0 });
            g.constant(ones)
        }
    };
    let interests = build_interests(g, embedded, assignment, position, guide);
    InterestNodes {
        assignment,
        position,
        guide,
        interests,
    }
}

/// `½ Σ_{i≠j} T_ij²` for the prototype covariance `T = (C−C̄)(C−C̄)ᵀ / K`.
pub fn build_orthogonality(g: &mut Graph) -> Var {
    let k = g.params().dims().interests;
    let centering = Array2::from_shape_fn((k, k), |(i, j)| if i == j { 1.0 } else { 0.0 } - 1.0 / k as f64);
    let off_diag = Array2::from_shape_fn((k, k), |(i, j)| if i == j { 0.0 } else { 1.0 });
    let h = g.constant(centering);
    let c = g.param(Param::Prototypes);
    let centered = g.matmul(h, c);
    let t = g.matmul_t(centered, centered);
    let t = g.scale(t, 1.0 / k as f64);
    let off = g.constant(off_diag);
    let t = g.mul(t, off);
    let sq = g.mul(t, t);
    let total = g.sum(sq);
    g.scale(total, 0.5)
}

pub fn intention_assignment(params: &ModelParams, embedded: &SequenceEmbedding) -> Array2<f64> {
    let mut g = Graph::new(params);
    let e = g.constant(embedded.rows.clone());
    let out = build_assignment(&mut g, e, &embedded.mask);
    g.value(out).to_owned()
}

pub fn position_weights(params: &ModelParams, embedded: &SequenceEmbedding) -> Array2<f64> {
    let mut g = Graph::new(params);
    let e = g.constant(embedded.rows.clone());
    let out = build_position_weights(&mut g, e, &embedded.mask);
    g.value(out).to_owned()
}

pub fn preference_guided_attention(
    params: &ModelParams,
    embedded: &SequenceEmbedding,
    preference: &Array1<f64>,
) -> Array1<f64> {
    let mut g = Graph::new(params);
    let e = g.constant(embedded.rows.clone());
    let p = g.constant(preference.clone().insert_axis(ndarray::Axis(0)));
    let out = build_guided_attention(&mut g, e, p, &embedded.mask);
    g.value(out).column(0).to_owned()
}

pub fn interest_embeddings(
    params: &ModelParams,
    embedded: &SequenceEmbedding,
    assignment: &Array2<f64>,
    position: &Array2<f64>,
    guide: &Array1<f64>,
) -> Array2<f64> {
    let mut g = Graph::new(params);
    let e = g.constant(embedded.rows.clone());
    let a = g.constant(assignment.clone());
    let p = g.constant(position.clone());
    let gd = g.constant(guide.clone().insert_axis(ndarray::Axis(1)));
    let out = build_interests(&mut g, e, a, p, gd);
    g.value(out).to_owned()
}

/// Runs the whole local extractor for one embedded sequence.
pub fn extract_interests(
    params: &ModelParams,
    embedded: &SequenceEmbedding,
    preference: Option<&Array1<f64>>,
) -> InterestSet {
    let mut g = Graph::new(params);
    let e = g.constant(embedded.rows.clone());
    let p = preference.map(|p| g.constant(p.clone().insert_axis(ndarray::Axis(0))));
    let nodes = build_extraction(&mut g, e, p, &embedded.mask);
    InterestSet {
        interests: g.value(nodes.interests).to_owned(),
        assignment: g.value(nodes.assignment).to_owned(),
        position: g.value(nodes.position).to_owned(),
        guide: g.value(nodes.guide).column(0).to_owned(),
    }
}

pub fn orthogonality_regularizer(params: &ModelParams) -> f64 {
    let mut g = Graph::new(params);
    let out = build_orthogonality(&mut g);
    g.scalar(out)
}
