//! Composition of the two scales into a user representation.

use std::collections::HashSet;

use ndarray::{Array1, Array2, Axis};

use crate::aggregate::{self, build_aggregate, Retrieval};
use crate::config::TrainConfig;
use crate::encoder::{build_embed, build_encoder};
use crate::error::{DsieError, Result};
use crate::graph::{Graph, Var};
use crate::interest::build_extraction;
use crate::params::ModelParams;

/// Graph nodes of one forward pass over a compact (unpadded) sequence.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub preference: Option<Var>,
    pub interests: Var,
    pub alpha: Option<Var>,
    /// `1×d` current interest; `None` when the global scale is disabled and
    /// the caller picks an interest itself.
    pub current: Option<Var>,
}

pub fn build_forward(g: &mut Graph, items: &[usize], config: &TrainConfig) -> Result<ForwardNodes> {
    if items.is_empty() {
        return Err(DsieError::EmptySequence);
    }
    let mask = vec![true; items.len()];
    if config.uses_global_scale() {
        let enc = build_encoder(g, items, &mask)?;
        let local = build_extraction(g, enc.embedded, Some(enc.preference), &mask);
        let (alpha, current) = build_aggregate(g, local.interests, enc.preference, config.tau);
        Ok(ForwardNodes {
            preference: Some(enc.preference),
            interests: local.interests,
            alpha: Some(alpha),
            current: Some(current),
        })
    } else {
        let embedded = build_embed(g, items, &mask)?;
        let local = build_extraction(g, embedded, None, &mask);
        Ok(ForwardNodes {
            preference: None,
            interests: local.interests,
            alpha: None,
            current: None,
        })
    }
}

/// Everything inference needs about one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRepresentation {
    pub preference: Option<Array1<f64>>,
    pub interests: Array2<f64>,
    pub alpha: Option<Array1<f64>>,
    pub current: Option<Array1<f64>>,
}

pub fn represent(params: &ModelParams, config: &TrainConfig, history: &[usize]) -> Result<UserRepresentation> {
    let mut g = Graph::new(params);
    let nodes = build_forward(&mut g, history, config)?;
    let row = |g: &Graph, v: Var| g.value(v).index_axis(Axis(0), 0).to_owned();
    Ok(UserRepresentation {
        preference: nodes.preference.map(|v| row(&g, v)),
        interests: g.value(nodes.interests).to_owned(),
        alpha: nodes.alpha.map(|v| row(&g, v)),
        current: nodes.current.map(|v| row(&g, v)),
    })
}

/// Top-N for a history: aggregated single-vector retrieval, or K-way
/// retrieval with rerank when the global scale is disabled.
pub fn recommend(
    params: &ModelParams,
    config: &TrainConfig,
    history: &[usize],
    n: usize,
    exclude: &HashSet<usize>,
) -> Result<Retrieval> {
    let rep = represent(params, config, history)?;
    match &rep.current {
        Some(current) => aggregate::retrieve_topn(current.view(), params, n, exclude),
        None => aggregate::retrieve_per_interest(&rep.interests, params, n, exclude),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::encoder::{embed_sequence, encode_preference};
    use crate::interest::extract_interests;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ModelParams, TrainConfig) {
        let cfg = TrainConfig {
            dim: 6,
            layers: 2,
            interests: 3,
            ..TrainConfig::default()
        };
        let p = ModelParams::new(cfg.dims(15), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        (p, cfg)
    }

    #[test]
    fn padding_does_not_change_the_representation() {
        let (p, cfg) = setup();
        let items = [4, 1, 9, 9, 13];
        let rep = represent(&p, &cfg, &items).unwrap();

        let mut prefix = vec![0; 3];
        prefix.extend_from_slice(&items);
        let mut mask = vec![false; 3];
        mask.extend([true; 5]);
        let pref = encode_preference(&p, &prefix, &mask).unwrap();
        let emb = embed_sequence(&p, &prefix, &mask).unwrap();
        let local = extract_interests(&p, &emb, Some(&pref.0));
        let agg = aggregate::aggregate(&local.interests, &pref.0, cfg.tau).unwrap();

        let close = |a: &Array1<f64>, b: &Array1<f64>| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(rep.preference.as_ref().unwrap(), &pref.0));
        assert!(close(rep.current.as_ref().unwrap(), &agg.current));
        for k in 0..3 {
            assert!(close(
                &rep.interests.row(k).to_owned(),
                &local.interests.row(k).to_owned()
            ));
        }
    }

    #[test]
    fn no_gs_uses_per_interest_retrieval() {
        let (p, mut cfg) = setup();
        cfg.variant = Variant::NoGs;
        let rep = represent(&p, &cfg, &[1, 2]).unwrap();
        assert!(rep.current.is_none() && rep.preference.is_none());
        let exclude: HashSet<usize> = [1, 2].into_iter().collect();
        let r = recommend(&p, &cfg, &[1, 2], 5, &exclude).unwrap();
        let oracle = aggregate::retrieve_per_interest(&rep.interests, &p, 5, &exclude).unwrap();
        assert_eq!(r, oracle);
        assert!(represent(&p, &cfg, &[]).is_err());
    }
}
