//! Siamese encoder, per-scale frequency gates, spatial recovery cascade
//! and decoder.
//!
//! Scale indices are 1-based (1 = stride 4 … 4 = stride 32). Operator
//! conventions in the recovery blocks:
//! - coarse fusion concatenates the signed difference `Z1 − Z2` with `Z1`
//!   along channels and projects `2C → C` with a depth-wise separable block;
//! - the spatial weight map concatenates channel-mean and channel-max maps;
//! - refinement adds the gated deepest representation to the previous
//!   (deeper) refined representation: `C_i = W ⊗ up(C_4) + up(C_{i+1})`.

mod config;
mod encoder;

pub use config::ModelConfig;
pub use encoder::{check_input_extent, Encoder, ENCODER_STRIDE};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Binding, Conv2d, ConvBnRelu, DsConv, Module, ParamStore, Registry};
use crate::scalar::Scalar;
use crate::spectral::{BasisCache, Fem, FrequencyIndexSet};
use crate::autograd::Conv2dGeometry;

/// Which acquisition date a stream belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    T1,
    T2,
}

/// Spatial recovery block for one of the three shallower scales.
#[derive(Clone, Debug)]
pub struct Srm {
    pub scale: usize,
    psi: DsConv,
    phi: Conv2d,
    gate_proj: Conv2d,
    next_proj: Conv2d,
}

impl Srm {
    fn new(scale: usize, widths: [usize; 4]) -> Self {
        let w = widths[scale - 1];
        let name = format!("srm{scale}");
        Self {
            scale,
            psi: DsConv::new(&format!("{name}.psi"), 2 * w, w),
            phi: Conv2d::pointwise(format!("{name}.phi"), 2, 1, true),
            gate_proj: Conv2d::pointwise(format!("{name}.gate_proj"), widths[3], w, false),
            next_proj: Conv2d::pointwise(format!("{name}.next_proj"), widths[scale], w, false),
        }
    }
}

impl Module for Srm {
    fn register(&self, reg: &mut Registry) {
        self.psi.register(reg);
        self.phi.register(reg);
        self.gate_proj.register(reg);
        self.next_proj.register(reg);
    }
}

#[derive(Clone, Debug)]
struct Decoder {
    fuse: ConvBnRelu,
    classifier: Conv2d,
}

/// Every intermediate of one forward pass, for inspection and tests.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub features_t1: [Var; 4],
    pub features_t2: [Var; 4],
    pub enhanced_t1: [Var; 4],
    pub enhanced_t2: [Var; 4],
    pub weights: [Var; 3],
    pub representations: [Var; 4],
    pub logits: Var,
}

/// The full change-detection network, generic over the element type.
#[derive(Debug)]
pub struct Network<T> {
    config: ModelConfig,
    indices: FrequencyIndexSet,
    encoders: Vec<Encoder>,
    fems: Vec<Fem>,
    fuse: DsConv,
    srms: Vec<Srm>,
    decoder: Decoder,
    cache: BasisCache<T>,
}

impl<T: Scalar> Network<T> {
    /// Builds the layer tree, resolving frequency indices from the config.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let indices = config.frequency_indices()?;
        Self::with_indices(config, indices)
    }

    pub fn with_indices(config: ModelConfig, indices: FrequencyIndexSet) -> Result<Self> {
        config.validate()?;
        if indices.len() != config.freq_components {
            return Err(Error::CountMismatch {
                expected: config.freq_components,
                found: indices.len(),
            });
        }
        let w = config.widths;
        let encoders = if config.share_encoder_weights {
            vec![Encoder::new("encoder", w)]
        } else {
            vec![Encoder::new("encoder_t1", w), Encoder::new("encoder_t2", w)]
        };
        let fems = (0..4)
            .map(|s| Fem::new(&format!("fem{}", s + 1), w[s], indices.clone()))
            .collect::<Result<Vec<_>>>()?;
        let total: usize = w.iter().sum();
        Ok(Self {
            encoders,
            fems,
            fuse: DsConv::new("fuse", 2 * w[3], w[3]),
            srms: (1..=3).map(|s| Srm::new(s, w)).collect(),
            decoder: Decoder {
                fuse: ConvBnRelu::new(
                    "decoder.fuse",
                    total,
                    config.decoder_width,
                    1,
                    Conv2dGeometry::pointwise(),
                    true,
                ),
                classifier: Conv2d::pointwise("decoder.classifier", config.decoder_width, 2, true),
            },
            cache: BasisCache::new(),
            indices,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn indices(&self) -> &FrequencyIndexSet {
        &self.indices
    }

    pub fn registry(&self) -> Registry {
        let mut reg = Registry::default();
        self.register(&mut reg);
        reg
    }

    pub fn init_params(&self, seed: u64) -> ParamStore<T> {
        ParamStore::initialize(&self.registry(), seed)
    }

    pub fn param_count(&self) -> usize {
        self.registry().param_count()
    }

    pub fn encoder(&self, stream: Stream) -> &Encoder {
        match stream {
            Stream::T2 if self.encoders.len() == 2 => &self.encoders[1],
            _ => &self.encoders[0],
        }
    }

    pub fn encoder_forward(
        &self,
        tape: &mut Tape<T>,
        bind: &mut Binding<T>,
        stream: Stream,
        img: Var,
    ) -> Result<[Var; 4]> {
        self.encoder(stream).forward(tape, bind, img)
    }

    /// Features of both dates. A shared encoder sees the two dates as one
    /// batch so batch-norm statistics are pooled over both.
    pub fn encode_pair(
        &self,
        tape: &mut Tape<T>,
        bind: &mut Binding<T>,
        t1: Var,
        t2: Var,
    ) -> Result<([Var; 4], [Var; 4])> {
        if self.encoders.len() == 2 {
            let f1 = self.encoder_forward(tape, bind, Stream::T1, t1)?;
            let f2 = self.encoder_forward(tape, bind, Stream::T2, t2)?;
            return Ok((f1, f2));
        }
        let n = tape.value(t1).shape()[0];
        let both = tape.concat_batch(&[t1, t2])?;
        let f = self.encoders[0].forward(tape, bind, both)?;
        let mut f1 = f;
        let mut f2 = f;
        for s in 0..4 {
            f1[s] = tape.slice_batch(f[s], 0, n)?;
            f2[s] = tape.slice_batch(f[s], n, n)?;
        }
        Ok((f1, f2))
    }

    /// Frequency gate of scale `scale` (1-based), shared by both dates.
    pub fn fem(&self, scale: usize) -> &Fem {
        &self.fems[scale - 1]
    }

    pub fn fem_forward(
        &self,
        tape: &mut Tape<T>,
        bind: &mut Binding<T>,
        scale: usize,
        x: Var,
    ) -> Result<Var> {
        self.fems[scale - 1].forward(tape, bind, x, &self.cache)
    }

    pub fn basis_cache(&self) -> &BasisCache<T> {
        &self.cache
    }

    /// `concat(Z1 - Z2, Z1)` along channels.
    pub fn difference_concat(&self, tape: &mut Tape<T>, z1: Var, z2: Var) -> Result<Var> {
        if tape.value(z1).shape() != tape.value(z2).shape() {
            return Err(Error::shape(format!(
                "bi-temporal features differ: {:?} vs {:?}",
                tape.value(z1).shape(),
                tape.value(z2).shape()
            )));
        }
        let diff = tape.sub(z1, z2)?;
        tape.concat_channels(&[diff, z1])
    }

    /// Deepest-scale change representation `C_4`.
    pub fn deep_fuse(&self, tape: &mut Tape<T>, bind: &mut Binding<T>, z1: Var, z2: Var) -> Result<Var> {
        let cat = self.difference_concat(tape, z1, z2)?;
        self.fuse.forward(tape, bind, cat)
    }

    fn srm(&self, scale: usize) -> Result<&Srm> {
        if !(1..=3).contains(&scale) {
            return Err(Error::Config(format!(
                "spatial recovery runs on scales 1..=3, got {scale}"
            )));
        }
        Ok(&self.srms[scale - 1])
    }

    /// Coarse change representation `Z_c` at `scale`.
    pub fn srm_coarse(
        &self,
        tape: &mut Tape<T>,
        bind: &mut Binding<T>,
        scale: usize,
        z1: Var,
        z2: Var,
    ) -> Result<Var> {
        let srm = self.srm(scale)?;
        let cat = self.difference_concat(tape, z1, z2)?;
        srm.psi.forward(tape, bind, cat)
    }

    /// Spatial weight map `[N, 1, H, W]` in `(0, 1)`.
    pub fn srm_weight(
        &self,
        tape: &mut Tape<T>,
        bind: &mut Binding<T>,
        scale: usize,
        zc: Var,
    ) -> Result<Var> {
        let srm = self.srm(scale)?;
        tape.value(zc).ensure_finite("coarse representation")?;
        let mean = tape.channel_mean(zc)?;
        let max = tape.channel_max(zc)?;
        let pooled = tape.concat_channels(&[mean, max])?;
        let z = srm.phi.forward(tape, bind, pooled)?;
        Ok(tape.sigmoid(z))
    }

    /// Refined representation `C_i = W ⊗ up(C_4) + up(C_{i+1})`.
    pub fn srm_refine(
        &self,
        tape: &mut Tape<T>,
        bind: &mut Binding<T>,
        scale: usize,
        weight: Var,
        c4: Var,
        next: Var,
    ) -> Result<Var> {
        let srm = self.srm(scale)?;
        let (_, one, h, w) = tape.value(weight).dims4()?;
        if one != 1 {
            return Err(Error::shape("spatial weight map must have one channel"));
        }
        let gated = up_project(tape, bind, &srm.gate_proj, c4, h, w)?;
        let gated = tape.mul_spatial(gated, weight)?;
        let carried = up_project(tape, bind, &srm.next_proj, next, h, w)?;
        tape.add(gated, carried)
    }

    /// Change logits `[N, 2, out_h, out_w]` from the four representations.
    pub fn decode(
        &self,
        tape: &mut Tape<T>,
        bind: &mut Binding<T>,
        reps: &[Var],
        out_h: usize,
        out_w: usize,
    ) -> Result<Var> {
        if reps.len() != 4 {
            return Err(Error::shape(format!(
                "decoder needs 4 change representations, got {}",
                reps.len()
            )));
        }
        let (_, _, h, w) = tape.value(reps[0]).dims4()?;
        let mut parts = Vec::with_capacity(4);
        for &r in reps {
            parts.push(tape.resize_bilinear(r, h, w)?);
        }
        let cat = tape.concat_channels(&parts)?;
        let y = self.decoder.fuse.forward(tape, bind, cat)?;
        let y = self.decoder.classifier.forward(tape, bind, y)?;
        tape.resize_bilinear(y, out_h, out_w)
    }

    /// `[N, 3, H, W]` pair to `[N, 2, H, W]` logits.
    pub fn forward(&self, tape: &mut Tape<T>, bind: &mut Binding<T>, t1: Var, t2: Var) -> Result<Var> {
        self.forward_traced(tape, bind, t1, t2).map(|t| t.logits)
    }

    pub fn forward_traced(
        &self,
        tape: &mut Tape<T>,
        bind: &mut Binding<T>,
        t1: Var,
        t2: Var,
    ) -> Result<ForwardTrace> {
        let (s1, s2) = (tape.value(t1).shape().to_vec(), tape.value(t2).shape().to_vec());
        if s1 != s2 {
            return Err(Error::shape(format!("image pair differs: {s1:?} vs {s2:?}")));
        }
        let (_, c, h, w) = tape.value(t1).dims4()?;
        check_input_extent(c, h, w)?;

        let (f1, f2) = self.encode_pair(tape, bind, t1, t2)?;
        let mut z1 = f1;
        let mut z2 = f2;
        for s in 0..4 {
            z1[s] = self.fem_forward(tape, bind, s + 1, f1[s])?;
            z2[s] = self.fem_forward(tape, bind, s + 1, f2[s])?;
        }
        let c4 = self.deep_fuse(tape, bind, z1[3], z2[3])?;
        let mut reps = [c4; 4];
        let mut weights = [c4; 3];
        let mut next = c4;
        for scale in (1..=3).rev() {
            let zc = self.srm_coarse(tape, bind, scale, z1[scale - 1], z2[scale - 1])?;
            let wmap = self.srm_weight(tape, bind, scale, zc)?;
            let ci = self.srm_refine(tape, bind, scale, wmap, c4, next)?;
            weights[scale - 1] = wmap;
            reps[scale - 1] = ci;
            next = ci;
        }
        let logits = self.decode(tape, bind, &reps, h, w)?;
        Ok(ForwardTrace {
            features_t1: f1,
            features_t2: f2,
            enhanced_t1: z1,
            enhanced_t2: z2,
            weights,
            representations: reps,
            logits,
        })
    }
}

/// Bilinear resize to `h×w` followed by a bias-free pointwise projection.
fn up_project<T: Scalar>(
    tape: &mut Tape<T>,
    bind: &mut Binding<T>,
    proj: &Conv2d,
    x: Var,
    h: usize,
    w: usize,
) -> Result<Var> {
    let up = tape.resize_bilinear(x, h, w)?;
    proj.forward(tape, bind, up)
}

impl<T: Scalar> Module for Network<T> {
    fn register(&self, reg: &mut Registry) {
        for e in &self.encoders {
            e.register(reg);
        }
        for f in &self.fems {
            f.register(reg);
        }
        self.fuse.register(reg);
        for s in &self.srms {
            s.register(reg);
        }
        self.decoder.fuse.register(reg);
        self.decoder.classifier.register(reg);
    }
}

/// Learnable scalar count of the architecture described by `config`.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let indices = FrequencyIndexSet::default_order(
        config.freq_components,
        config.base_grid[0],
        config.base_grid[1],
    )?;
    Ok(Network::<f32>::with_indices(config.clone(), indices)?.param_count())
}

pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
