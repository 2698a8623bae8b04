//! Global-scale encoder: a residual stack of single-head self-attention
//! layers followed by an attentive readout over positions.
//!
//! Each `build_*` function appends its computation to a [`Graph`]; the
//! plain functions of the same name run a throwaway graph and return
//! values.

use ndarray::{Array1, Array2};

use crate::error::{DsieError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ModelParams, Param};

/// Embedded, left-padded sequence. Rows at pad positions are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEmbedding {
    pub rows: Array2<f64>,
    pub mask: Vec<bool>,
}

/// The inherent-preference vector of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceVector(pub Array1<f64>);

/// Readout weights over positions and the pooled preference.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub weights: Array1<f64>,
    pub preference: PreferenceVector,
}

/// Graph nodes produced by [`build_encoder`].
#[derive(Debug, Clone)]
pub struct EncoderNodes {
    pub embedded: Var,
    pub hidden: Vec<Var>,
    /// `1×L` readout weights.
    pub weights: Var,
    /// `1×d` preference.
    pub preference: Var,
}

pub fn check_indices(prefix: &[usize], mask: &[bool], items: usize) -> Result<()> {
    if prefix.len() != mask.len() {
        return Err(DsieError::invalid("prefix and mask lengths differ"));
    }
    for (&i, &m) in prefix.iter().zip(mask) {
        if m && i >= items {
            return Err(DsieError::IndexOutOfRange { index: i, items });
        }
    }
    Ok(())
}

pub fn build_embed(g: &mut Graph, prefix: &[usize], mask: &[bool]) -> Result<Var> {
    check_indices(prefix, mask, g.params().dims().items)?;
    let rows = prefix.iter().zip(mask).map(|(&i, &m)| m.then_some(i)).collect();
    Ok(g.gather(Param::ItemEmbeddings, rows))
}

pub fn build_self_attention(g: &mut Graph, x: Var, mask: &[bool], layer: usize) -> Var {
    let d = g.shape(x).1;
    let wq = g.param(Param::Query(layer));
    let wk = g.param(Param::Key(layer));
    let wv = g.param(Param::Value(layer));
    let q = g.matmul(x, wq);
    let k = g.matmul(x, wk);
    let v = g.matmul(x, wv);
    let logits = g.matmul_t(q, k);
    let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
    let attn = g.softmax_rows(logits, mask);
    let attn = g.mask_rows(attn, mask);
    g.matmul(attn, v)
}

pub fn build_residual_stack(g: &mut Graph, embedded: Var, mask: &[bool]) -> Vec<Var> {
    let layers = g.params().dims().layers;
    let mut hidden = Vec::with_capacity(layers);
    let mut prev = embedded;
    for s in 0..layers {
        let attn = build_self_attention(g, prev, mask, s);
        let w = g.param(Param::Residual(s));
        let b = g.param(Param::ResidualBias(s));
        let z = g.matmul(attn, w);
        let z = g.add_row(z, b);
        let z = g.relu(z);
        let z = g.mask_rows(z, mask);
        prev = g.add(z, prev);
        hidden.push(prev);
    }
    hidden
}

/// Returns `(weights 1×L, preference 1×d)`.
pub fn build_readout(g: &mut Graph, hidden: &[Var], embedded: Var, mask: &[bool]) -> Result<(Var, Var)> {
    if !mask.iter().any(|&m| m) {
        return Err(DsieError::EmptySequence);
    }
    let concat = g.concat_cols(hidden);
    let w1 = g.param(Param::ReadoutHidden);
    let w2 = g.param(Param::ReadoutScore);
    let z = g.matmul(concat, w1);
    let z = g.tanh(z);
    let scores = g.matmul(z, w2);
    let scores = g.transpose(scores);
    let weights = g.softmax_rows(scores, mask);
    let preference = g.matmul(weights, embedded);
    Ok((weights, preference))
}

pub fn build_encoder(g: &mut Graph, prefix: &[usize], mask: &[bool]) -> Result<EncoderNodes> {
    let embedded = build_embed(g, prefix, mask)?;
    let hidden = build_residual_stack(g, embedded, mask);
    let (weights, preference) = build_readout(g, &hidden, embedded, mask)?;
    Ok(EncoderNodes {
        embedded,
        hidden,
        weights,
        preference,
    })
}

pub fn embed_sequence(params: &ModelParams, prefix: &[usize], mask: &[bool]) -> Result<SequenceEmbedding> {
    let mut g = Graph::new(params);
    let e = build_embed(&mut g, prefix, mask)?;
    Ok(SequenceEmbedding {
        rows: g.value(e).to_owned(),
        mask: mask.to_vec(),
    })
}

/// One attention layer applied to `x`. An all-pad mask yields zeros.
pub fn self_attention(params: &ModelParams, layer: usize, x: &Array2<f64>, mask: &[bool]) -> Array2<f64> {
    let mut g = Graph::new(params);
    let xv = g.constant(x.clone());
    let out = build_self_attention(&mut g, xv, mask, layer);
    g.value(out).to_owned()
}

pub fn residual_stack(params: &ModelParams, embedded: &SequenceEmbedding) -> Vec<Array2<f64>> {
    let mut g = Graph::new(params);
    let e = g.constant(embedded.rows.clone());
    build_residual_stack(&mut g, e, &embedded.mask)
        .into_iter()
        .map(|h| g.value(h).to_owned())
        .collect()
}

pub fn attentive_readout(
    params: &ModelParams,
    hidden: &[Array2<f64>],
    embedded: &SequenceEmbedding,
) -> Result<Readout> {
    let mut g = Graph::new(params);
    let hs: Vec<Var> = hidden.iter().map(|h| g.constant(h.clone())).collect();
    let e = g.constant(embedded.rows.clone());
    let (w, p) = build_readout(&mut g, &hs, e, &embedded.mask)?;
    Ok(Readout {
        weights: g.value(w).row(0).to_owned(),
        preference: PreferenceVector(g.value(p).row(0).to_owned()),
    })
}

pub fn encode_preference(params: &ModelParams, prefix: &[usize], mask: &[bool]) -> Result<PreferenceVector> {
    let mut g = Graph::new(params);
    let nodes = build_encoder(&mut g, prefix, mask)?;
    Ok(PreferenceVector(g.value(nodes.preference).row(0).to_owned()))
}
