use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use super::config::{AblationFlags, EncoderMode, ModelConfig, Stream};
use super::encoder::{build_input_sequence, encode, Encoder};
use super::layers::{
    contextual_backward, contextual_forward, cross_entropy_from_logits, local_backward, local_forward, logits,
    multihop_backward, multihop_forward, relational_backward, relational_forward, softmax, Aggregation, ContextCache,
    HopCache, LocalCache, LocalParamsRef, RgcnCache,
};
use super::params::{ModelParams, NUM_CLASSES};
use super::ModelError;
use crate::conversation::{Stance, StanceInstance, TargetKind};
use crate::graph::{build_relational_graph, build_reply_graph};
use crate::kam::{chain_key, RelationAnnotations, RelationKind};

/// Probabilities over (against, favor, none).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceDistribution {
    pub probs: [f64; NUM_CLASSES],
}

impl StanceDistribution {
    pub fn from_array(p: &Array1<f64>) -> Self {
        StanceDistribution {
            probs: [p[0], p[1], p[2]],
        }
    }

    /// Most probable class; ties go to the lower index.
    pub fn predicted(&self) -> Stance {
        let mut best = 0;
        for k in 1..NUM_CLASSES {
            if self.probs[k] > self.probs[best] {
                best = k;
            }
        }
        Stance::from_index(best)
    }

    /// `-ln p(gold)`
    pub fn loss(&self, gold: Stance) -> f64 {
        let v = -self.probs[gold.index()].ln();
        // -ln 1 is -0.0
        v.max(0.0)
    }
}

/// Everything the network needs for one instance, computed once.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    pub id: String,
    pub target: String,
    pub target_kind: TargetKind,
    pub gold: Stance,
    pub depth: usize,
    /// Chain positions kept after truncation.
    pub kept: Vec<usize>,
    /// Pooled sentence matrix (frozen encoder).
    pub h: Array2<f64>,
    /// Per segment, the token-table rows to average (fine-tune mode).
    pub segment_tokens: Option<Vec<Vec<usize>>>,
    pub adjacency: Array2<f64>,
    pub logical: Vec<Aggregation>,
    pub act: Vec<Aggregation>,
}

impl PreparedInstance {
    pub fn n(&self) -> usize {
        self.h.nrows()
    }
}

fn aggregations(
    annotations: Option<&RelationAnnotations>,
    instance: &StanceInstance,
    kind: RelationKind,
    keep_unknown: bool,
    kept: &[usize],
) -> Result<Vec<Aggregation>, ModelError> {
    let missing = || ModelError::MissingAnnotations {
        id: instance.id.clone(),
        kind,
    };
    let ann = annotations.ok_or_else(missing)?;
    if ann.chain_len() != instance.chain.len() || ann.chain_key != chain_key(&instance.chain) {
        return Err(ModelError::Input(format!(
            "annotations for {} were made for a different chain",
            instance.id
        )));
    }
    if !ann.has_kind(kind) {
        return Err(missing());
    }
    let mut graph = build_relational_graph(ann, kind, keep_unknown)?;
    if kept.len() < graph.n {
        graph = graph.restrict(kept);
    }
    Ok(graph
        .aggregation_matrices()
        .into_iter()
        .enumerate()
        .filter(|(_, m)| m.iter().any(|&v| v != 0.0))
        .map(|(rel, matrix)| Aggregation { rel, matrix })
        .collect())
}

/// Encodes the chain and builds its graphs. Annotations are only consulted
/// for the relational streams that are enabled.
pub fn prepare(
    instance: &StanceInstance,
    annotations: Option<&RelationAnnotations>,
    config: &ModelConfig,
    flags: &AblationFlags,
    encoder: &dyn Encoder,
) -> Result<PreparedInstance, ModelError> {
    if encoder.dim() != config.hidden {
        return Err(ModelError::Config(format!(
            "encoder width {} differs from hidden size {}",
            encoder.dim(),
            config.hidden
        )));
    }
    let seq = build_input_sequence(&instance.chain, &instance.target, encoder)?;
    let h = encode(&seq, encoder)?;
    let segment_tokens = match config.encoder_mode {
        EncoderMode::Frozen => None,
        EncoderMode::FineTune => {
            let ids = encoder
                .token_ids(&seq.tokens)
                .ok_or_else(|| ModelError::Config("fine-tuning needs an encoder with a token table".into()))?;
            Some(seq.segment_spans.iter().map(|sp| ids[sp.clone()].to_vec()).collect())
        }
    };
    let n = seq.kept.len();
    let logical = if flags.use_logical {
        aggregations(
            annotations,
            instance,
            RelationKind::Logical,
            config.keep_unknown,
            &seq.kept,
        )?
    } else {
        Vec::new()
    };
    let act = if flags.use_act {
        aggregations(annotations, instance, RelationKind::Act, false, &seq.kept)?
    } else {
        Vec::new()
    };
    Ok(PreparedInstance {
        id: instance.id.clone(),
        target: instance.target.name.clone(),
        target_kind: instance.target.kind,
        gold: instance.gold,
        depth: instance.depth,
        kept: seq.kept,
        h,
        segment_tokens,
        adjacency: build_reply_graph(n).propagation(config.gcn_normalize),
        logical,
        act,
    })
}

/// Per-stream `n x D` outputs of the four knowledge layers. Disabled streams
/// are all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutputs {
    pub local: Array2<f64>,
    pub contextual: Array2<f64>,
    pub logical: Array2<f64>,
    pub act: Array2<f64>,
}

enum LayerCache {
    Local(LocalCache),
    Contextual(ContextCache),
    Relational(Vec<RgcnCache>),
}

struct StreamTrace {
    stream: Stream,
    layer: LayerCache,
    out: Array2<f64>,
    hops: Vec<HopCache>,
}

struct Trace {
    streams: Vec<StreamTrace>,
    /// Classifier input after dropout.
    input: Array1<f64>,
    dropout: Option<Array1<f64>>,
    logits: Array1<f64>,
}

/// Model weights plus the settings they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Mkian {
    pub config: ModelConfig,
    pub flags: AblationFlags,
    pub params: ModelParams,
    pub encoder_identity: String,
    pub seed: u64,
}

impl Mkian {
    pub fn new(
        config: ModelConfig,
        flags: AblationFlags,
        encoder: &dyn Encoder,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        flags.validate()?;
        if encoder.dim() != config.hidden {
            return Err(ModelError::Config(format!(
                "encoder width {} differs from hidden size {}",
                encoder.dim(),
                config.hidden
            )));
        }
        let table = match config.encoder_mode {
            EncoderMode::Frozen => None,
            EncoderMode::FineTune => Some(
                encoder
                    .lookup_table()
                    .ok_or_else(|| ModelError::Config("fine-tuning needs an encoder with a token table".into()))?,
            ),
        };
        let params = ModelParams::init(&config, seed, table);
        Ok(Mkian {
            config,
            flags,
            params,
            encoder_identity: encoder.identity(),
            seed,
        })
    }

    pub fn prepare(
        &self,
        instance: &StanceInstance,
        annotations: Option<&RelationAnnotations>,
        encoder: &dyn Encoder,
    ) -> Result<PreparedInstance, ModelError> {
        if encoder.identity() != self.encoder_identity {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "model was built for encoder {}, got {}",
                self.encoder_identity,
                encoder.identity()
            )));
        }
        prepare(instance, annotations, &self.config, &self.flags, encoder)
    }

    /// Parameter-name prefixes of the disabled streams.
    pub fn frozen_prefixes(&self) -> Vec<&'static str> {
        self.flags.disabled_streams().into_iter().map(Stream::prefix).collect()
    }

    fn sentence_matrix(&self, prep: &PreparedInstance) -> Array2<f64> {
        match (&prep.segment_tokens, &self.params.token_table) {
            (Some(segments), Some(table)) => {
                let mut h = Array2::zeros((segments.len(), table.ncols()));
                for (k, ids) in segments.iter().enumerate() {
                    let mut row = h.row_mut(k);
                    for &id in ids {
                        row += &table.row(id);
                    }
                    row /= ids.len() as f64;
                }
                h
            }
            _ => prep.h.clone(),
        }
    }

    fn local_ref(&self) -> LocalParamsRef<'_> {
        LocalParamsRef {
            k1: &self.params.conv1_kernel,
            b1: &self.params.conv1_bias,
            k2: &self.params.conv2_kernel,
            b2: &self.params.conv2_bias,
        }
    }

    fn layer(&self, stream: Stream, h: &Array2<f64>, prep: &PreparedInstance) -> (Array2<f64>, LayerCache) {
        let act = self.config.activation;
        match stream {
            Stream::Local => {
                let (o, c) = local_forward(
                    h,
                    &self.local_ref(),
                    self.config.kernel_size,
                    self.config.local_mask,
                    act,
                );
                (o, LayerCache::Local(c))
            }
            Stream::Contextual => {
                let (o, c) = contextual_forward(h, &prep.adjacency, &self.params.gcn_w0, &self.params.gcn_w1, act);
                (o, LayerCache::Contextual(c))
            }
            Stream::Logical => {
                let (o, c) = relational_forward(h, &prep.logical, &self.params.logical, act);
                (o, LayerCache::Relational(c))
            }
            Stream::Act => {
                let (o, c) = relational_forward(h, &prep.act, &self.params.act, act);
                (o, LayerCache::Relational(c))
            }
        }
    }

    pub fn layer_outputs(&self, prep: &PreparedInstance) -> LayerOutputs {
        let h = self.sentence_matrix(prep);
        let mut outs: Vec<Array2<f64>> = Stream::ALL
            .iter()
            .map(|&s| {
                if self.flags.enabled(s) {
                    self.layer(s, &h, prep).0
                } else {
                    Array2::zeros(h.raw_dim())
                }
            })
            .collect();
        let act = outs.pop().expect("four streams");
        let logical = outs.pop().expect("four streams");
        let contextual = outs.pop().expect("four streams");
        let local = outs.pop().expect("four streams");
        LayerOutputs {
            local,
            contextual,
            logical,
            act,
        }
    }

    fn run(&self, prep: &PreparedInstance, dropout: Option<&Array1<f64>>) -> Trace {
        let h = self.sentence_matrix(prep);
        let n = h.nrows();
        let d = self.config.hidden;
        let mut input = Array1::zeros(4 * d);
        let mut streams = Vec::new();
        for stream in Stream::ALL {
            if !self.flags.enabled(stream) {
                continue;
            }
            let (out, layer) = self.layer(stream, &h, prep);
            let i = stream.index();
            let (fused, hops) = multihop_forward(
                &out,
                &self.params.ln_gain[i],
                &self.params.ln_bias[i],
                self.config.lambda,
            );
            input.slice_mut(s![i * d..(i + 1) * d]).assign(&fused.row(n - 1));
            streams.push(StreamTrace {
                stream,
                layer,
                out,
                hops,
            });
        }
        if let Some(mask) = dropout {
            input *= mask;
        }
        let logits = logits(&input, &self.params.cls_weight, &self.params.cls_bias);
        Trace {
            streams,
            input,
            dropout: dropout.cloned(),
            logits,
        }
    }

    /// Inference-mode prediction.
    pub fn forward(&self, prep: &PreparedInstance) -> StanceDistribution {
        StanceDistribution::from_array(&softmax(&self.run(prep, None).logits))
    }

    /// The length-4D classifier input (the four fused vectors).
    pub fn fused(&self, prep: &PreparedInstance) -> Array1<f64> {
        self.run(prep, None).input
    }

    pub fn loss(&self, prep: &PreparedInstance) -> f64 {
        cross_entropy_from_logits(&self.run(prep, None).logits, prep.gold.index())
    }

    /// Loss and parameter gradients for one instance. `dropout` is an inverted
    /// dropout mask over the classifier input (entries 0 or 1/(1-p)).
    pub fn loss_and_grad(&self, prep: &PreparedInstance, dropout: Option<&Array1<f64>>) -> (f64, ModelParams) {
        let trace = self.run(prep, dropout);
        let gold = prep.gold.index();
        let loss = cross_entropy_from_logits(&trace.logits, gold);
        let mut grads = self.params.zeros_like();

        let mut dlogits = softmax(&trace.logits);
        dlogits[gold] -= 1.0;
        for c in 0..NUM_CLASSES {
            grads.cls_weight.row_mut(c).scaled_add(dlogits[c], &trace.input);
        }
        grads.cls_bias.assign(&dlogits);
        let mut dinput = self.params.cls_weight.t().dot(&dlogits);
        if let Some(mask) = &trace.dropout {
            dinput *= mask;
        }

        let d = self.config.hidden;
        let act = self.config.activation;
        let n = prep.n();
        let mut dh = Array2::<f64>::zeros((n, d));
        for st in &trace.streams {
            let i = st.stream.index();
            let mut dfinal = Array2::zeros(st.out.raw_dim());
            dfinal.row_mut(n - 1).assign(&dinput.slice(s![i * d..(i + 1) * d]));
            let (dout, dgain, dbias) =
                multihop_backward(&st.hops, &self.params.ln_gain[i], self.config.lambda, &dfinal);
            grads.ln_gain[i] = dgain;
            grads.ln_bias[i] = dbias;
            let dh_s = match (&st.layer, st.stream) {
                (LayerCache::Local(c), _) => {
                    let (dx, g) = local_backward(c, &dout, &self.local_ref(), act);
                    grads.conv1_kernel = g.k1;
                    grads.conv1_bias = g.b1;
                    grads.conv2_kernel = g.k2;
                    grads.conv2_bias = g.b2;
                    dx
                }
                (LayerCache::Contextual(c), _) => {
                    let (dx, dw0, dw1) =
                        contextual_backward(c, &prep.adjacency, &self.params.gcn_w0, &self.params.gcn_w1, act, &dout);
                    grads.gcn_w0 = dw0;
                    grads.gcn_w1 = dw1;
                    dx
                }
                (LayerCache::Relational(c), Stream::Logical) => {
                    relational_backward(c, &prep.logical, &self.params.logical, act, &dout, &mut grads.logical)
                }
                (LayerCache::Relational(c), _) => {
                    relational_backward(c, &prep.act, &self.params.act, act, &dout, &mut grads.act)
                }
            };
            dh += &dh_s;
        }

        if let (Some(segments), Some(table)) = (&prep.segment_tokens, grads.token_table.as_mut()) {
            for (k, ids) in segments.iter().enumerate() {
                let scale = 1.0 / ids.len() as f64;
                for &id in ids {
                    table.row_mut(id).scaled_add(scale, &dh.row(k));
                }
            }
        }
        (loss, grads)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.config.fingerprint(&self.encoder_identity),
            config: self.config.clone(),
            flags: self.flags,
            encoder_identity: self.encoder_identity.clone(),
            seed: self.seed,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, ModelError> {
        if ckpt.config.fingerprint(&ckpt.encoder_identity) != ckpt.config_hash {
            return Err(ModelError::Checkpoint("config hash does not match its contents".into()));
        }
        ckpt.config.validate()?;
        if !ckpt.params.all_finite() {
            return Err(ModelError::Checkpoint("non-finite parameters".into()));
        }
        Ok(Mkian {
            config: ckpt.config,
            flags: ckpt.flags,
            params: ckpt.params,
            encoder_identity: ckpt.encoder_identity,
            seed: ckpt.seed,
        })
    }
}

/// Self-describing JSON container for a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub flags: AblationFlags,
    pub config_hash: String,
    pub encoder_identity: String,
    pub seed: u64,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let json = serde_json::to_vec(self).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        fs::write(path, json).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Checkpoint, ModelError> {
        let bytes = fs::read(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::{Target, Utterance};
    use crate::kam::{AnnotationCache, Annotator, StubProvider};
    use crate::mkian::{Activation, HashEncoder};

    fn instance(texts: &[&str]) -> StanceInstance {
        let chain: Vec<Utterance> = texts
            .iter()
            .enumerate()
            .map(|(k, t)| Utterance {
                id: format!("u{k}"),
                parent_id: (k > 0).then(|| format!("u{}", k - 1)),
                author: format!("a{k}"),
                text: t.to_string(),
                depth: k + 1,
                stance: Some(Stance::Favor),
                relevant: true,
            })
            .collect();
        StanceInstance {
            id: "t/last".into(),
            thread_id: "t".into(),
            depth: chain.len(),
            chain,
            target: Target {
                name: "Tesla".into(),
                kind: TargetKind::Specific,
                target_text: "Tesla".into(),
            },
            gold: Stance::Favor,
        }
    }

    fn annotate(inst: &StanceInstance) -> RelationAnnotations {
        let cache = AnnotationCache::in_memory();
        let stub = StubProvider::new();
        Annotator::new(&stub, &cache)
            .annotate_chain(&inst.chain, &RelationKind::BOTH)
            .unwrap()
    }

    fn small() -> (ModelConfig, HashEncoder) {
        let cfg = ModelConfig {
            hidden: 6,
            activation: Activation::Tanh,
            ..Default::default()
        };
        (cfg, HashEncoder::new(6, 3))
    }

    #[test]
    fn single_utterance_gives_a_distribution() {
        let (cfg, enc) = small();
        let inst = instance(&["Tesla ships a new car"]);
        let model = Mkian::new(cfg, AblationFlags::ALL_ON, &enc, 1).unwrap();
        let prep = model.prepare(&inst, Some(&annotate(&inst)), &enc).unwrap();
        let p = model.forward(&prep);
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(model.forward(&prep), p);
    }

    #[test]
    fn missing_annotations_are_reported() {
        let (cfg, enc) = small();
        let inst = instance(&["a post", "a reply"]);
        let model = Mkian::new(cfg, AblationFlags::ALL_ON, &enc, 1).unwrap();
        assert!(matches!(
            model.prepare(&inst, None, &enc),
            Err(ModelError::MissingAnnotations { .. })
        ));
        let no_rel = AblationFlags {
            use_logical: false,
            use_act: false,
            ..AblationFlags::ALL_ON
        };
        let model = Mkian { flags: no_rel, ..model };
        model.prepare(&inst, None, &enc).unwrap();
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (cfg, enc) = small();
        let model = Mkian::new(cfg, AblationFlags::without(Stream::Local), &enc, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.checkpoint().save(&path).unwrap();
        let back = Mkian::from_checkpoint(Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn loss_values() {
        let uniform = StanceDistribution { probs: [1.0 / 3.0; 3] };
        assert!((uniform.loss(Stance::None) - 3f64.ln()).abs() < 1e-12);
        let p = StanceDistribution {
            probs: [0.25, 0.5, 0.25],
        };
        assert!((p.loss(Stance::Against) - 1.3862943611198906).abs() < 1e-12);
        let sure = StanceDistribution { probs: [0.0, 1.0, 0.0] };
        assert_eq!(sure.loss(Stance::Favor), 0.0);
        assert_eq!(sure.predicted(), Stance::Favor);
    }
}
