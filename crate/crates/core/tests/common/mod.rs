#![allow(dead_code)]

pub mod oracles;

use csd_core::conversation::{Stance, StanceInstance, Target, TargetKind, Utterance};
use csd_core::kam::{AnnotationCache, Annotator, RelationAnnotations, RelationKind, StubProvider};
use csd_core::mkian::{AblationFlags, Activation, HashEncoder, Mkian, ModelConfig, PreparedInstance};
use ndarray::Array1;

pub fn chain_instance(texts: &[&str], gold: Stance) -> StanceInstance {
    let chain: Vec<Utterance> = texts
        .iter()
        .enumerate()
        .map(|(k, t)| Utterance {
            id: format!("u{k}"),
            parent_id: (k > 0).then(|| format!("u{}", k - 1)),
            author: format!("user{k}"),
            text: t.to_string(),
            depth: k + 1,
            stance: Some(gold),
            relevant: true,
        })
        .collect();
    StanceInstance {
        id: format!("t/u{}", texts.len() - 1),
        thread_id: "t".into(),
        depth: chain.len(),
        chain,
        target: Target {
            name: "Tesla".into(),
            kind: TargetKind::Specific,
            target_text: "Tesla".into(),
        },
        gold,
    }
}

pub fn stub_annotations(inst: &StanceInstance) -> RelationAnnotations {
    let cache = AnnotationCache::in_memory();
    let stub = StubProvider::new();
    Annotator::new(&stub, &cache)
        .annotate_chain(&inst.chain, &RelationKind::BOTH)
        .expect("stub annotation")
}

/// Max over groups of `|analytic - numeric| / max(|analytic|, |numeric|)`
/// (norms taken per group); groups with both norms below 1e-9 are skipped.
pub fn worst_relative_error(
    model: &Mkian,
    prep: &PreparedInstance,
    dropout: Option<&Array1<f64>>,
) -> Vec<(String, f64)> {
    let (_, grads) = model.loss_and_grad(prep, dropout);
    let analytic: Vec<(String, Vec<f64>)> = grads.groups().into_iter().map(|(n, s)| (n, s.to_vec())).collect();
    let eps = 1e-6;
    let mut out = Vec::new();
    for (gi, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for k in 0..a.len() {
            let mut plus = model.clone();
            plus.params.groups_mut()[gi].1[k] += eps;
            let mut minus = model.clone();
            minus.params.groups_mut()[gi].1[k] -= eps;
            let lp = plus.loss_and_grad(prep, dropout).0;
            let lm = minus.loss_and_grad(prep, dropout).0;
            numeric[k] = (lp - lm) / (2.0 * eps);
        }
        let diff: f64 = a
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel = if scale < 1e-9 { 0.0 } else { diff / scale };
        out.push((name.clone(), rel));
    }
    out
}

pub fn micro(config: ModelConfig) -> (Mkian, PreparedInstance) {
    let enc = HashEncoder::new(config.hidden, 17);
    let inst = chain_instance(
        &[
            "Tesla recalls two million cars",
            "that is not a problem for Tesla",
            "great news for the stock",
            "I don't buy it at all",
        ],
        Stance::Against,
    );
    let ann = stub_annotations(&inst);
    let model = Mkian::new(config, AblationFlags::ALL_ON, &enc, 23).unwrap();
    let prep = model.prepare(&inst, Some(&ann), &enc).unwrap();
    (model, prep)
}

pub fn tanh_config() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        activation: Activation::Tanh,
        ..Default::default()
    }
}
