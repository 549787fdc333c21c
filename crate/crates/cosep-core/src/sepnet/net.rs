//! Parameter initialization and graph builders for the U-Net separator
//! and the audio classifier.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use super::{SepnetConfig, SepnetError};
use crate::tensor::{
    fan_in_gaussian, BnConfig, BnRunning, Graph, GraphParams, NodeId, ParamStore, Tensor,
    TensorError,
};

const LEAKY_SLOPE: f64 = 0.2;
const CLF_LAYERS: usize = 4;

/// Encoder channel schedule: doubling from base/8, capped at base.
pub(super) fn enc_channels(cfg: &SepnetConfig) -> Vec<usize> {
    (0..cfg.n_layers())
        .map(|i| (cfg.base_channels / 8 << i).min(cfg.base_channels))
        .collect()
}

fn clf_channels(cfg: &SepnetConfig) -> Vec<usize> {
    (0..CLF_LAYERS).map(|i| (cfg.base_channels / 8 << i).min(cfg.base_channels)).collect()
}

fn conv_block_params(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    w_shape: Vec<usize>,
    fan_in: usize,
    out_ch: usize,
    with_bn: bool,
) -> Result<(), TensorError> {
    store.add(format!("{prefix}.w"), fan_in_gaussian(rng, w_shape, fan_in))?;
    store.add(format!("{prefix}.b"), Tensor::zeros(vec![out_ch]))?;
    if with_bn {
        store.add(format!("{prefix}.bn.gamma"), Tensor::full(vec![out_ch], 1.0))?;
        store.add(format!("{prefix}.bn.beta"), Tensor::zeros(vec![out_ch]))?;
    }
    Ok(())
}

/// Register all U-Net and classifier parameters plus batch-norm running
/// stats, in a fixed order.
pub(super) fn init_params(
    cfg: &SepnetConfig,
    store: &mut ParamStore,
    bn: &mut BTreeMap<String, BnRunning>,
    rng: &mut ChaCha8Rng,
) -> Result<(), TensorError> {
    let n = cfg.n_layers();
    let ch = enc_channels(cfg);

    let mut cin = 1;
    for i in 1..=n {
        let cout = ch[i - 1];
        conv_block_params(
            store,
            rng,
            &format!("unet.enc{i}"),
            vec![cout, cin, 4, 4],
            cin * 16,
            cout,
            true,
        )?;
        bn.insert(format!("unet.enc{i}.bn"), BnRunning::new(cout));
        cin = cout;
    }
    for j in 1..=n {
        // Decoder layer j consumes the previous decoder output
        // concatenated with encoder layer n−j+1's activation (the first
        // layer instead fuses the bottleneck with the tiled conditioning
        // vector); transposed-conv weights are IOHW.
        let in_ch = if j == 1 { ch[n - 1] + cfg.cond_dim } else { 2 * ch[n - j] };
        let out_ch = if j == n { 1 } else { ch[n - j - 1] };
        conv_block_params(
            store,
            rng,
            &format!("unet.dec{j}"),
            vec![in_ch, out_ch, 4, 4],
            in_ch * 16,
            out_ch,
            j < n,
        )?;
        if j < n {
            bn.insert(format!("unet.dec{j}.bn"), BnRunning::new(out_ch));
        }
    }

    let mut cin = 1;
    for (i, &cout) in clf_channels(cfg).iter().enumerate() {
        let i = i + 1;
        conv_block_params(
            store,
            rng,
            &format!("clf.conv{i}"),
            vec![cout, cin, 4, 4],
            cin * 16,
            cout,
            true,
        )?;
        bn.insert(format!("clf.conv{i}.bn"), BnRunning::new(cout));
        cin = cout;
    }
    store.add("clf.head.w", fan_in_gaussian(rng, vec![cin, cfg.n_classes], cin))?;
    store.add("clf.head.b", Tensor::zeros(vec![cfg.n_classes]))?;

    store.add_scaled(
        "cond.table",
        fan_in_gaussian(rng, vec![cfg.n_classes, cfg.cond_dim], cfg.cond_dim),
        cfg.cond_lr_scale,
    )?;
    Ok(())
}

struct Ctx<'a> {
    g: &'a mut Graph,
    gp: &'a mut GraphParams,
    params: &'a ParamStore,
    bn: &'a mut BTreeMap<String, BnRunning>,
    train: bool,
}

impl Ctx<'_> {
    fn bind(&mut self, name: &str) -> Result<NodeId, TensorError> {
        self.gp.bind(self.g, self.params, name)
    }

    fn conv_bn_act(
        &mut self,
        x: NodeId,
        prefix: &str,
        transpose: bool,
        activation: Option<f64>,
    ) -> Result<NodeId, TensorError> {
        let w = self.bind(&format!("{prefix}.w"))?;
        let b = self.bind(&format!("{prefix}.b"))?;
        let mut h = if transpose {
            self.g.conv_transpose2d(x, w, b, 2, 1)?
        } else {
            self.g.conv2d(x, w, b, 2, 1)?
        };
        let bn_key = format!("{prefix}.bn");
        if let Some(running) = self.bn.get_mut(&bn_key) {
            let gamma = self.gp.bind(self.g, self.params, &format!("{prefix}.bn.gamma"))?;
            let beta = self.gp.bind(self.g, self.params, &format!("{prefix}.bn.beta"))?;
            h = self.g.batch_norm(h, gamma, beta, running, BnConfig::default(), self.train)?;
        }
        h = match activation {
            Some(slope) if slope != 0.0 => self.g.leaky_relu(h, slope),
            Some(_) => self.g.relu(h),
            None => h,
        };
        Ok(h)
    }
}

fn expect_spec_input(cfg: &SepnetConfig, g: &Graph, x: NodeId) -> Result<(), SepnetError> {
    let shape = g.value(x).shape();
    let s = cfg.spec_size;
    if shape.len() != 4 || shape[1] != 1 || shape[2] != s || shape[3] != s {
        return Err(SepnetError::Shape {
            expected: format!("[batch, 1, {s}, {s}]"),
            got: shape.to_vec(),
        });
    }
    Ok(())
}

/// Mask head: n_layers stride-2 convolutions (BatchNorm + leaky ReLU 0.2)
/// down to a 2×2 bottleneck, conditioning vector tiled 2×2 and channel-
/// concatenated, then n_layers transposed convolutions (BatchNorm + ReLU)
/// with skip concatenations, final layer straight into a sigmoid.
#[allow(clippy::too_many_arguments)]
pub(super) fn unet_forward(
    cfg: &SepnetConfig,
    g: &mut Graph,
    gp: &mut GraphParams,
    params: &ParamStore,
    bn: &mut BTreeMap<String, BnRunning>,
    x: NodeId,
    cond: NodeId,
    train: bool,
) -> Result<NodeId, SepnetError> {
    expect_spec_input(cfg, g, x)?;
    let cond_shape = g.value(cond).shape().to_vec();
    let batch = g.value(x).shape()[0];
    if cond_shape != [batch, cfg.cond_dim] {
        return Err(SepnetError::Shape {
            expected: format!("[{batch}, {}]", cfg.cond_dim),
            got: cond_shape,
        });
    }

    let mut ctx = Ctx { g, gp, params, bn, train };
    let n = cfg.n_layers();
    let mut h = if cfg.log_input { ctx.g.log1p(x) } else { x };
    let mut skips = Vec::with_capacity(n);
    for i in 1..=n {
        h = ctx.conv_bn_act(h, &format!("unet.enc{i}"), false, Some(LEAKY_SLOPE))?;
        skips.push(h);
    }

    let tiled = ctx.g.tile_spatial(cond, 2, 2)?;
    h = ctx.g.concat_channels(skips[n - 1], tiled)?;
    for j in 1..=n {
        if j >= 2 {
            h = ctx.g.concat_channels(h, skips[n - j])?;
        }
        if j < n {
            h = ctx.conv_bn_act(h, &format!("unet.dec{j}"), true, Some(0.0))?;
        } else {
            h = ctx.conv_bn_act(h, &format!("unet.dec{j}"), true, None)?;
            h = ctx.g.sigmoid(h);
        }
    }
    Ok(h)
}

/// Classifier: 4 stride-2 conv blocks, global average pooling, affine
/// head. Returns (logits, penultimate pooled features).
pub(super) fn classifier_forward(
    cfg: &SepnetConfig,
    g: &mut Graph,
    gp: &mut GraphParams,
    params: &ParamStore,
    bn: &mut BTreeMap<String, BnRunning>,
    x: NodeId,
    train: bool,
) -> Result<(NodeId, NodeId), SepnetError> {
    expect_spec_input(cfg, g, x)?;
    let mut ctx = Ctx { g, gp, params, bn, train };
    let mut h = if cfg.log_input { ctx.g.log1p(x) } else { x };
    for i in 1..=CLF_LAYERS {
        h = ctx.conv_bn_act(h, &format!("clf.conv{i}"), false, Some(0.0))?;
    }
    let feats = ctx.g.global_avg_pool(h)?;
    let w = ctx.bind("clf.head.w")?;
    let b = ctx.bind("clf.head.b")?;
    let logits = ctx.g.affine(feats, w, b)?;
    Ok((logits, feats))
}
