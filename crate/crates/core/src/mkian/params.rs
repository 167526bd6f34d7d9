use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{EncoderMode, ModelConfig, Stream};
use crate::graph::relation_names;
use crate::kam::RelationKind;

/// Number of stance classes.
pub const NUM_CLASSES: usize = 3;

/// One relational graph convolution round: a weight per relation type plus
/// the self-connection weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgcnLayerParams {
    pub relation: Vec<Array2<f64>>,
    pub self_loop: Array2<f64>,
}

/// Every learnable weight. Matrices act on row vectors (`h W`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `(γ, D_in, D_out)`
    pub conv1_kernel: Array3<f64>,
    pub conv1_bias: Array1<f64>,
    pub conv2_kernel: Array3<f64>,
    pub conv2_bias: Array1<f64>,
    pub gcn_w0: Array2<f64>,
    pub gcn_w1: Array2<f64>,
    pub logical: Vec<RgcnLayerParams>,
    pub act: Vec<RgcnLayerParams>,
    /// Per stream: `(hops, D)` layer-norm gains and biases.
    pub ln_gain: Vec<Array2<f64>>,
    pub ln_bias: Vec<Array2<f64>>,
    /// `(3, 4D)`
    pub cls_weight: Array2<f64>,
    pub cls_bias: Array1<f64>,
    /// Trainable token table in fine-tune mode.
    pub token_table: Option<Array2<f64>>,
}

fn uniform2(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let b = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-b..b))
}

impl ModelParams {
    /// Fan-in scaled uniform initialization from `seed`. `token_table` is
    /// copied from the encoder in fine-tune mode.
    pub fn init(config: &ModelConfig, seed: u64, token_table: Option<&Array2<f64>>) -> ModelParams {
        let d = config.hidden;
        let g = config.kernel_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kb = 1.0 / ((g * d) as f64).sqrt();
        let kernel = |rng: &mut ChaCha8Rng| Array3::from_shape_simple_fn((g, d, d), || rng.gen_range(-kb..kb));
        let conv1_kernel = kernel(&mut rng);
        let conv1_bias = Array1::from_shape_simple_fn(d, || rng.gen_range(-kb..kb));
        let conv2_kernel = kernel(&mut rng);
        let conv2_bias = Array1::from_shape_simple_fn(d, || rng.gen_range(-kb..kb));
        let gcn_w0 = uniform2(&mut rng, d, d, d);
        let gcn_w1 = uniform2(&mut rng, d, d, d);
        let rgcn = |kind: RelationKind, rng: &mut ChaCha8Rng| -> Vec<RgcnLayerParams> {
            let r = relation_names(kind, config.keep_unknown).len();
            (0..2)
                .map(|_| RgcnLayerParams {
                    relation: (0..r).map(|_| uniform2(rng, d, d, d)).collect(),
                    self_loop: uniform2(rng, d, d, d),
                })
                .collect()
        };
        let logical = rgcn(RelationKind::Logical, &mut rng);
        let act = rgcn(RelationKind::Act, &mut rng);
        let cls_weight = uniform2(&mut rng, NUM_CLASSES, 4 * d, 4 * d);
        ModelParams {
            conv1_kernel,
            conv1_bias,
            conv2_kernel,
            conv2_bias,
            gcn_w0,
            gcn_w1,
            logical,
            act,
            ln_gain: (0..4).map(|_| Array2::ones((config.hops, d))).collect(),
            ln_bias: (0..4).map(|_| Array2::zeros((config.hops, d))).collect(),
            cls_weight,
            cls_bias: Array1::zeros(NUM_CLASSES),
            token_table: match config.encoder_mode {
                EncoderMode::FineTune => token_table.cloned(),
                EncoderMode::Frozen => None,
            },
        }
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> ModelParams {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let zl = |ls: &Vec<RgcnLayerParams>| {
            ls.iter()
                .map(|l| RgcnLayerParams {
                    relation: l.relation.iter().map(z2).collect(),
                    self_loop: z2(&l.self_loop),
                })
                .collect()
        };
        ModelParams {
            conv1_kernel: Array3::zeros(self.conv1_kernel.raw_dim()),
            conv1_bias: Array1::zeros(self.conv1_bias.len()),
            conv2_kernel: Array3::zeros(self.conv2_kernel.raw_dim()),
            conv2_bias: Array1::zeros(self.conv2_bias.len()),
            gcn_w0: z2(&self.gcn_w0),
            gcn_w1: z2(&self.gcn_w1),
            logical: zl(&self.logical),
            act: zl(&self.act),
            ln_gain: self.ln_gain.iter().map(z2).collect(),
            ln_bias: self.ln_bias.iter().map(z2).collect(),
            cls_weight: z2(&self.cls_weight),
            cls_bias: Array1::zeros(self.cls_bias.len()),
            token_table: self.token_table.as_ref().map(z2),
        }
    }

    /// Named flat views of every parameter group, in a fixed order.
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        out.push((
            "local.conv1.kernel".into(),
            self.conv1_kernel.as_slice().expect("standard layout"),
        ));
        out.push((
            "local.conv1.bias".into(),
            self.conv1_bias.as_slice().expect("standard layout"),
        ));
        out.push((
            "local.conv2.kernel".into(),
            self.conv2_kernel.as_slice().expect("standard layout"),
        ));
        out.push((
            "local.conv2.bias".into(),
            self.conv2_bias.as_slice().expect("standard layout"),
        ));
        out.push(("contextual.w0".into(), self.gcn_w0.as_slice().expect("standard layout")));
        out.push(("contextual.w1".into(), self.gcn_w1.as_slice().expect("standard layout")));
        for (prefix, layers, kind) in [
            ("logical", &self.logical, RelationKind::Logical),
            ("act", &self.act, RelationKind::Act),
        ] {
            let names = relation_names(kind, true);
            for (l, layer) in layers.iter().enumerate() {
                for (r, w) in layer.relation.iter().enumerate() {
                    out.push((
                        format!("{prefix}.layer{}.rel.{}", l + 1, names[r]),
                        w.as_slice().expect("standard layout"),
                    ));
                }
                out.push((
                    format!("{prefix}.layer{}.self", l + 1),
                    layer.self_loop.as_slice().expect("standard layout"),
                ));
            }
        }
        for stream in Stream::ALL {
            let i = stream.index();
            out.push((
                format!("{}ln.gain", stream.prefix()),
                self.ln_gain[i].as_slice().expect("standard layout"),
            ));
            out.push((
                format!("{}ln.bias", stream.prefix()),
                self.ln_bias[i].as_slice().expect("standard layout"),
            ));
        }
        out.push((
            "classifier.weight".into(),
            self.cls_weight.as_slice().expect("standard layout"),
        ));
        out.push((
            "classifier.bias".into(),
            self.cls_bias.as_slice().expect("standard layout"),
        ));
        if let Some(t) = &self.token_table {
            out.push(("encoder.token_table".into(), t.as_slice().expect("standard layout")));
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::groups`], same order and names.
    pub fn groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let names: Vec<String> = self.groups().into_iter().map(|(n, _)| n).collect();
        let mut slices: Vec<&mut [f64]> = Vec::new();
        slices.push(self.conv1_kernel.as_slice_mut().expect("standard layout"));
        slices.push(self.conv1_bias.as_slice_mut().expect("standard layout"));
        slices.push(self.conv2_kernel.as_slice_mut().expect("standard layout"));
        slices.push(self.conv2_bias.as_slice_mut().expect("standard layout"));
        slices.push(self.gcn_w0.as_slice_mut().expect("standard layout"));
        slices.push(self.gcn_w1.as_slice_mut().expect("standard layout"));
        for layers in [&mut self.logical, &mut self.act] {
            for layer in layers.iter_mut() {
                for w in layer.relation.iter_mut() {
                    slices.push(w.as_slice_mut().expect("standard layout"));
                }
                slices.push(layer.self_loop.as_slice_mut().expect("standard layout"));
            }
        }
        for (g, b) in self.ln_gain.iter_mut().zip(self.ln_bias.iter_mut()) {
            slices.push(g.as_slice_mut().expect("standard layout"));
            slices.push(b.as_slice_mut().expect("standard layout"));
        }
        slices.push(self.cls_weight.as_slice_mut().expect("standard layout"));
        slices.push(self.cls_bias.as_slice_mut().expect("standard layout"));
        if let Some(t) = self.token_table.as_mut() {
            slices.push(t.as_slice_mut().expect("standard layout"));
        }
        names.into_iter().zip(slices).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.groups().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.groups().iter().all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over the bit patterns of every group whose name starts with
    /// `prefix` (empty prefix hashes everything).
    pub fn hash_groups(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, vals) in self.groups() {
            if name.starts_with(prefix) {
                h.update(name.as_bytes());
                for v in vals {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// `self += other * scale`, group by group.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src = other.groups();
        for ((_, dst), (_, s)) in self.groups_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += scale * v;
            }
        }
    }
}
