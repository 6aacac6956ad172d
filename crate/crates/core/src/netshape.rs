//! Shape inference and parameter accounting for the encoder-decoder network
//! built from detail-enhancing multi-block modules (no execution).
//!
//! Layout: four encoder modules at depths 1..4 (each three chained
//! ConvBlocks, concatenated and fused by a 1×1×1 conv) with 2× max pooling
//! between depths; at depths 2..4 a pooled copy of the network input passes
//! a 1×1×1 conv and is added to the module output. Three decoder modules
//! (two blocks each) climb back to full resolution, each taking the 2×
//! upsampled previous output concatenated with the encoder output of its
//! depth. Every decoder module feeds a 1-channel 1×1×1 supervision head
//! that is upsampled to the input size; the last one is the prediction.
//!
//! A ConvBlock is conv3 → instance norm → ReLU followed by a sigmoid gate
//! computed by a 1×1×1 conv over its own channels. Upsampling and pooling
//! carry no parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENCODER_DIES: usize = 4;
pub const DECODER_DIES: usize = 3;
pub const ENCODER_BLOCKS: usize = 3;
pub const DECODER_BLOCKS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub input_size: usize,
    pub input_channels: usize,
    /// Output channels of each ConvBlock, per encoder module.
    pub encoder_dies: Vec<Vec<usize>>,
    /// Output channels of each ConvBlock, per decoder module (deepest first).
    pub decoder_dies: Vec<Vec<usize>>,
    /// Fused output channels of every module, encoder then decoder.
    /// Defaults to each module's last block width.
    #[serde(default)]
    pub die_out_channels: Option<Vec<usize>>,
    /// Output channels of the input-residual 1×1×1 convs at depths 2..4.
    /// Defaults to the module output width at each depth.
    #[serde(default)]
    pub residual_channels: Option<Vec<usize>>,
}

impl Default for NetConfig {
    fn default() -> Self {
        let encoder_dies = vec![
            vec![8, 16, 32],
            vec![16, 32, 64],
            vec![32, 64, 128],
            vec![64, 128, 256],
        ];
        let decoder_dies = (0..DECODER_DIES)
            .map(|k| {
                let enc = &encoder_dies[ENCODER_DIES - 2 - k];
                vec![enc[2], enc[1]]
            })
            .collect();
        NetConfig {
            input_size: 128,
            input_channels: 1,
            encoder_dies,
            decoder_dies,
            die_out_channels: None,
            residual_channels: None,
        }
    }
}

/// Output of one named stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub stage: String,
    pub spatial: [usize; 3],
    pub channels: usize,
}

/// Parameter totals by part of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamCount {
    pub encoder: u64,
    pub residual: u64,
    pub decoder: u64,
    pub supervision: u64,
    pub total: u64,
}

/// Shape table plus parameter count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub layers: Vec<LayerShape>,
    pub params: ParamCount,
}

impl NetConfig {
    fn die_outs(&self) -> Vec<usize> {
        match &self.die_out_channels {
            Some(v) => v.clone(),
            None => self
                .encoder_dies
                .iter()
                .chain(&self.decoder_dies)
                .map(|b| *b.last().unwrap_or(&0))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_channels == 0 {
            return bad("input_channels must be > 0".into());
        }
        if self.encoder_dies.len() != ENCODER_DIES {
            return bad(format!(
                "need {ENCODER_DIES} encoder modules, got {}",
                self.encoder_dies.len()
            ));
        }
        if self.decoder_dies.len() != DECODER_DIES {
            return bad(format!(
                "need {DECODER_DIES} decoder modules, got {}",
                self.decoder_dies.len()
            ));
        }
        for (name, dies, blocks) in [
            ("encoder", &self.encoder_dies, ENCODER_BLOCKS),
            ("decoder", &self.decoder_dies, DECODER_BLOCKS),
        ] {
            for (i, d) in dies.iter().enumerate() {
                if d.len() != blocks {
                    return bad(format!(
                        "{name} module {} has {} blocks, expected {blocks}",
                        i + 1,
                        d.len()
                    ));
                }
                if d.contains(&0) {
                    return bad(format!("{name} module {} has a zero-width block", i + 1));
                }
            }
        }
        let outs = self.die_outs();
        if outs.len() != ENCODER_DIES + DECODER_DIES || outs.contains(&0) {
            return bad(format!(
                "die_out_channels needs {} positive entries, got {outs:?}",
                ENCODER_DIES + DECODER_DIES
            ));
        }
        if let Some(r) = &self.residual_channels {
            if r.len() != ENCODER_DIES - 1 || r.contains(&0) {
                return bad(format!(
                    "residual_channels needs {} positive entries, got {r:?}",
                    ENCODER_DIES - 1
                ));
            }
        }
        let divisor = 1 << (ENCODER_DIES - 1);
        if self.input_size == 0 || !self.input_size.is_multiple_of(divisor) {
            return Err(Error::IndivisibleInput {
                size: self.input_size,
                divisor,
            });
        }
        Ok(())
    }
}

/// Weights and biases of one ConvBlock: conv3, 1×1×1 gate, norm affine.
pub fn conv_block_params(c_in: usize, c_out: usize) -> u64 {
    let (i, o) = (c_in as u64, c_out as u64);
    27 * i * o + o + o * o + o + 2 * o
}

/// 1×1×1 conv with bias.
pub fn conv1_params(c_in: usize, c_out: usize) -> u64 {
    (c_in * c_out + c_out) as u64
}

fn die_params(c_in: usize, blocks: &[usize], out: usize) -> u64 {
    let mut prev = c_in;
    let mut n = 0;
    for &c in blocks {
        n += conv_block_params(prev, c);
        prev = c;
    }
    n + conv1_params(blocks.iter().sum(), out)
}

fn cube(s: usize) -> [usize; 3] {
    [s; 3]
}

struct Builder {
    layers: Vec<LayerShape>,
}

impl Builder {
    fn push(&mut self, stage: String, s: usize, channels: usize) {
        self.layers.push(LayerShape {
            stage,
            spatial: cube(s),
            channels,
        });
    }

    fn die(&mut self, name: &str, s: usize, blocks: &[usize], out: usize) {
        for (j, &c) in blocks.iter().enumerate() {
            self.push(format!("{name}.block{}", j + 1), s, c);
        }
        self.push(format!("{name}.concat"), s, blocks.iter().sum());
        self.push(format!("{name}.fuse"), s, out);
    }
}

/// Every stage's output shape, checking that each residual addition and
/// skip concatenation joins tensors of matching shape.
pub fn infer_shapes(cfg: &NetConfig) -> Result<Vec<LayerShape>> {
    cfg.validate()?;
    let outs = cfg.die_outs();
    let mut b = Builder { layers: Vec::new() };
    let s0 = cfg.input_size;
    b.push("input".into(), s0, cfg.input_channels);

    let mut enc_shape = Vec::new();
    let mut prev = (s0, cfg.input_channels);
    for i in 0..ENCODER_DIES {
        let depth = i + 1;
        let s = s0 >> i;
        if i > 0 {
            b.push(format!("enc{depth}.maxpool"), s, prev.1);
        }
        b.die(&format!("enc{depth}.die"), s, &cfg.encoder_dies[i], outs[i]);
        if i > 0 {
            let res = cfg
                .residual_channels
                .as_ref()
                .map_or(outs[i], |r| r[i - 1]);
            b.push(format!("enc{depth}.input_pool"), s, cfg.input_channels);
            b.push(format!("enc{depth}.input_conv1"), s, res);
            if res != outs[i] {
                return Err(Error::ShapeMismatch {
                    stage: format!("enc{depth}.add"),
                    left: (res, cube(s)),
                    right: (outs[i], cube(s)),
                });
            }
            b.push(format!("enc{depth}.add"), s, outs[i]);
        }
        enc_shape.push((s, outs[i]));
        prev = (s, outs[i]);
    }

    for k in 0..DECODER_DIES {
        let depth = ENCODER_DIES - 1 - k;
        let (skip_s, skip_c) = enc_shape[depth - 1];
        let up_s = prev.0 * 2;
        b.push(format!("dec{}.upsample", k + 1), up_s, prev.1);
        if up_s != skip_s {
            return Err(Error::ShapeMismatch {
                stage: format!("dec{}.skip_concat", k + 1),
                left: (prev.1, cube(up_s)),
                right: (skip_c, cube(skip_s)),
            });
        }
        b.push(format!("dec{}.skip_concat", k + 1), up_s, prev.1 + skip_c);
        let out = outs[ENCODER_DIES + k];
        b.die(&format!("dec{}.die", k + 1), up_s, &cfg.decoder_dies[k], out);
        b.push(format!("dec{}.head", k + 1), up_s, 1);
        b.push(format!("dec{}.head_upsample", k + 1), s0, 1);
        prev = (up_s, out);
    }
    if prev.0 != s0 {
        return Err(Error::ShapeMismatch {
            stage: "output".into(),
            left: (prev.1, cube(prev.0)),
            right: (cfg.input_channels, cube(s0)),
        });
    }
    b.push("output".into(), s0, 1);
    Ok(b.layers)
}

/// Closed-form parameter count of the configured network.
pub fn param_count(cfg: &NetConfig) -> Result<ParamCount> {
    cfg.validate()?;
    let outs = cfg.die_outs();
    let mut p = ParamCount::default();
    let mut prev = cfg.input_channels;
    for i in 0..ENCODER_DIES {
        p.encoder += die_params(prev, &cfg.encoder_dies[i], outs[i]);
        if i > 0 {
            let res = cfg.residual_channels.as_ref().map_or(outs[i], |r| r[i - 1]);
            p.residual += conv1_params(cfg.input_channels, res);
        }
        prev = outs[i];
    }
    for k in 0..DECODER_DIES {
        let skip = outs[ENCODER_DIES - 2 - k];
        let out = outs[ENCODER_DIES + k];
        p.decoder += die_params(prev + skip, &cfg.decoder_dies[k], out);
        p.supervision += conv1_params(out, 1);
        prev = out;
    }
    p.total = p.encoder + p.residual + p.decoder + p.supervision;
    Ok(p)
}

/// Shapes and parameter count together.
pub fn analyze(cfg: &NetConfig) -> Result<NetShape> {
    Ok(NetShape {
        layers: infer_shapes(cfg)?,
        params: param_count(cfg)?,
    })
}
