use rand::Rng;

use super::{patchify_batch, ViTConfig, ViTParams, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Post-softmax attention of one image: per layer `[heads, N + 1, N + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace<T> {
    pub layers: Vec<Tensor<T>>,
}

impl<T: Scalar> AttentionTrace<T> {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Checks shapes agree across layers and every row is a distribution.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::Dimension("empty attention trace".into()))?
            .shape()
            .to_vec();
        if first.len() != 3 || first[1] != first[2] {
            return Err(Error::Dimension(format!("attention layer shape {first:?}")));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.shape() != first.as_slice() {
                return Err(Error::Dimension(format!(
                    "layer {l} has shape {:?}, expected {first:?}",
                    layer.shape()
                )));
            }
            for row in layer.data().chunks(first[2]) {
                let sum: f64 = row.iter().map(|v| v.to_f64_lossy()).sum();
                if row.iter().any(|v| *v < T::zero()) || (sum - 1.0).abs() > tol {
                    return Err(Error::Contract(format!("layer {l} has a row summing to {sum}")));
                }
            }
        }
        Ok(())
    }
}

/// Graph handles produced by [`forward_graph`].
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub logits: NodeId,
    /// Per layer `[B, heads, N + 1, N + 1]` attention probabilities.
    pub attention: Vec<NodeId>,
}

/// Adds every parameter to `g`, trainable where `trainable(name)` holds.
pub fn bind_params<T: Scalar>(
    g: &mut Graph<T>,
    params: &ViTParams<T>,
    trainable: impl Fn(&str) -> bool,
) -> Vec<NodeId> {
    params
        .iter()
        .map(|(name, t)| {
            if trainable(name) {
                g.param(t.clone())
            } else {
                g.input(t.clone())
            }
        })
        .collect()
}

struct Bound<'a, T> {
    params: &'a ViTParams<T>,
    nodes: &'a [NodeId],
}

impl<T: Scalar> Bound<'_, T> {
    fn node(&self, name: &str) -> NodeId {
        self.nodes[self.params.index_of(name).unwrap_or_else(|| panic!("missing parameter {name}"))]
    }
}

fn linear<T: Scalar>(g: &mut Graph<T>, p: &Bound<T>, x: NodeId, prefix: &str) -> Result<NodeId> {
    let w = p.node(&format!("{prefix}.weight"));
    let b = p.node(&format!("{prefix}.bias"));
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

fn norm<T: Scalar>(g: &mut Graph<T>, p: &Bound<T>, x: NodeId, prefix: &str) -> Result<NodeId> {
    let gamma = p.node(&format!("{prefix}.gamma"));
    let beta = p.node(&format!("{prefix}.beta"));
    g.layer_norm(x, gamma, beta, T::from_f64_lossy(LAYER_NORM_EPS))
}

fn self_attention<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound<T>,
    cfg: &ViTConfig,
    x: NodeId,
    block: usize,
) -> Result<(NodeId, NodeId)> {
    let s = g.value(x).shape().to_vec();
    let (b, t, d) = (s[0], s[1], s[2]);
    let (h, hd) = (cfg.num_heads, cfg.head_dim());
    let prefix = format!("blocks.{block}.attn");
    let mut heads = |name: &str, perm: &[usize]| -> Result<NodeId> {
        let y = linear(g, p, x, &format!("{prefix}.{name}"))?;
        let y = g.reshape(y, &[b, t, h, hd])?;
        g.permute(y, perm)
    };
    let q = heads("q", &[0, 2, 1, 3])?;
    let k_t = heads("k", &[0, 2, 3, 1])?;
    let v = heads("v", &[0, 2, 1, 3])?;
    let scores = g.matmul(q, k_t)?;
    let scores = g.scale(scores, T::one() / T::from_usize_lossy(hd).sqrt());
    let probs = g.softmax(scores, 3)?;
    let ctx = g.matmul(probs, v)?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, t, d])?;
    Ok((linear(g, p, ctx, &format!("{prefix}.proj"))?, probs))
}

/// Records the forward pass of `images` (`[B, C, H, W]` in `[0, 1]`) on `g`.
///
/// `nodes` are the bound parameters from [`bind_params`]. Train mode applies
/// inverted dropout in the head and needs `rng`; eval mode is a pure
/// function of the parameters and the input.
pub fn forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    params: &ViTParams<T>,
    nodes: &[NodeId],
    images: &Tensor<T>,
    mode: Mode,
    rng: Option<&mut RngStream>,
) -> Result<ForwardNodes> {
    let cfg = params.config();
    let want = [cfg.channels, cfg.image_size, cfg.image_size];
    if images.ndim() != 4 || images.shape()[1..] != want {
        return Err(Error::Dimension(format!(
            "model expects [B, {}, {}, {}] images, got {:?}",
            want[0],
            want[1],
            want[2],
            images.shape()
        )));
    }
    let p = Bound { params, nodes };
    let patches = g.input(patchify_batch(images, cfg.patch_size)?);
    let tokens = linear(g, &p, patches, "patch_embed")?;
    let tokens = g.prepend_token(tokens, p.node("cls_token"))?;
    let mut x = g.add(tokens, p.node("pos_embed"))?;

    let mut attention = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        let h = norm(g, &p, x, &format!("blocks.{i}.norm1"))?;
        let (a, probs) = self_attention(g, &p, cfg, h, i)?;
        attention.push(probs);
        x = g.add(x, a)?;
        let h = norm(g, &p, x, &format!("blocks.{i}.norm2"))?;
        let h = linear(g, &p, h, &format!("blocks.{i}.mlp.fc1"))?;
        let h = g.gelu(h);
        let h = linear(g, &p, h, &format!("blocks.{i}.mlp.fc2"))?;
        x = g.add(x, h)?;
    }
    let x = norm(g, &p, x, "norm")?;
    let cls = g.select_token(x, 0)?;
    let hidden = linear(g, &p, cls, "head.fc1")?;
    let mut hidden = g.gelu(hidden);
    if mode == Mode::Train && cfg.head_dropout > 0.0 {
        let rng = rng.ok_or_else(|| Error::Contract("train-mode forward needs a dropout stream".into()))?;
        let keep = 1.0 - cfg.head_dropout;
        let scale = T::from_f64_lossy(1.0 / keep);
        let shape = g.value(hidden).shape().to_vec();
        let mask = Tensor::from_fn(&shape, |_| {
            let u: f64 = rng.random();
            if u < keep {
                scale
            } else {
                T::zero()
            }
        });
        hidden = g.dropout(hidden, mask)?;
    }
    let logits = linear(g, &p, hidden, "head.fc2")?;
    Ok(ForwardNodes { logits, attention })
}

/// Forward pass returning logits `[B, K]` and, when requested, one
/// attention trace per image.
pub fn forward<T: Scalar>(
    params: &ViTParams<T>,
    images: &Tensor<T>,
    mode: Mode,
    capture_attention: bool,
    rng: Option<&mut RngStream>,
) -> Result<(Tensor<T>, Option<Vec<AttentionTrace<T>>>)> {
    let mut g = Graph::new();
    let nodes = bind_params(&mut g, params, |_| false);
    let out = forward_graph(&mut g, params, &nodes, images, mode, rng)?;
    let logits = g.value(out.logits).clone();
    logits.ensure_finite("model forward")?;
    let traces = capture_attention.then(|| {
        let batch = images.shape()[0];
        (0..batch)
            .map(|b| AttentionTrace {
                layers: out
                    .attention
                    .iter()
                    .map(|&id| {
                        let t = g.value(id);
                        let s = &t.shape()[1..];
                        let per: usize = s.iter().product();
                        Tensor::new(s.to_vec(), t.data()[b * per..(b + 1) * per].to_vec())
                            .expect("slice of a valid tensor")
                    })
                    .collect(),
            })
            .collect()
    });
    Ok((logits, traces))
}
