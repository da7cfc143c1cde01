//! The full model and its ablation variants, plus the checkpoint format.
//!
//! ```text
//! image ─ backbone ─ F ─┬──────────────────────────┐
//!                       └ seg head ─ S ─ projection ─ S' ─ fusion ─ F' ─┬ pose head   ─ 2.5D pose
//!                                                                       └ global head ─ handedness, z(R→L)
//! ```
//!
//! Which edges exist is decided by [`Variant`].

use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{KinematicTree, Pose25D};
use crate::heatmap::{
    assemble_pose_node, expected_rel_depth_node, per_joint_depth_node, soft_argmax_node, spatial_softmax_node,
    RelDepthDistribution,
};
use crate::nn::{BatchNorm2d, Conv2d, ConvBlock, Ctx, Linear, ParamKind, ParamStore};
use crate::segmentation::{
    one_hot_argmax_node, FeatureMap, FeatureRole, FusionNet, PartTaxonomy, SegmentationHead, SegmentationVolume,
    SemanticProjection, TaxonomyKind,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Backbone straight into the heads.
    Baseline,
    /// Baseline with a supervised segmentation head whose output is not used.
    BaselineSl,
    /// Pose from projected segmentation logits only.
    SegmOnly,
    /// Like `SegmOnly` but the logits are quantized to argmax one-hots first.
    SegmOnlyLabel,
    /// Visual and semantic features fused.
    Full,
    /// `Full` trained without segmentation supervision.
    FullNoSl,
    /// `Full` with a background/right/left taxonomy.
    LrProb,
    /// `LrProb` with argmax one-hot masks in place of logits.
    LrMask,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Baseline,
        Variant::BaselineSl,
        Variant::SegmOnly,
        Variant::SegmOnlyLabel,
        Variant::Full,
        Variant::FullNoSl,
        Variant::LrProb,
        Variant::LrMask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::BaselineSl => "baseline-sl",
            Variant::SegmOnly => "segm-only",
            Variant::SegmOnlyLabel => "segm-only-label",
            Variant::Full => "full",
            Variant::FullNoSl => "full-no-sl",
            Variant::LrProb => "lr-prob",
            Variant::LrMask => "lr-mask",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }

    pub fn has_segmentation(self) -> bool {
        self != Variant::Baseline
    }

    /// Whether the segmentation output is supervised during training.
    pub fn supervises_segmentation(self) -> bool {
        !matches!(self, Variant::Baseline | Variant::FullNoSl)
    }

    pub fn fuses_visual(self) -> bool {
        matches!(self, Variant::Full | Variant::FullNoSl | Variant::LrProb | Variant::LrMask)
    }

    pub fn uses_semantic(self) -> bool {
        self.fuses_visual() || matches!(self, Variant::SegmOnly | Variant::SegmOnlyLabel)
    }

    pub fn quantizes(self) -> bool {
        matches!(self, Variant::SegmOnlyLabel | Variant::LrMask)
    }

    pub fn taxonomy(self) -> TaxonomyKind {
        match self {
            Variant::LrProb | Variant::LrMask => TaxonomyKind::LeftRight,
            _ => TaxonomyKind::Parts,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub crop_size: usize,
    /// Output widths of the four backbone stages; the last is `D_F`.
    pub backbone_widths: [usize; 4],
    pub seg_head_widths: [usize; 2],
    pub semantic_hidden: usize,
    /// `D_S`.
    pub semantic_channels: usize,
    pub fusion_widths: [usize; 3],
    pub global_widths: [usize; 6],
    pub mlp_hidden: usize,
    pub depth_bins: usize,
    pub rel_depth_min_mm: f64,
    pub rel_depth_max_mm: f64,
    /// Millimeters per unit of latent depth.
    pub depth_unit_mm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

impl ModelConfig {
    /// Sizes of the original design: 256-pixel crops, 64×64×32 features,
    /// 128×128 segmentation, 512 semantic channels.
    pub fn full_scale() -> Self {
        ModelConfig {
            variant: Variant::Full,
            crop_size: 256,
            backbone_widths: [32, 64, 64, 32],
            seg_head_widths: [16, 64],
            semantic_hidden: 64,
            semantic_channels: 512,
            fusion_widths: [64, 128, 256],
            global_widths: [64, 128, 256, 512, 512, 512],
            mlp_hidden: 512,
            depth_bins: 64,
            rel_depth_min_mm: -400.0,
            rel_depth_max_mm: 400.0,
            depth_unit_mm: 1.0,
        }
    }

    /// Narrow model for 32-pixel crops that trains on one CPU core.
    pub fn desk() -> Self {
        ModelConfig {
            variant: Variant::Full,
            crop_size: 32,
            backbone_widths: [16, 32, 32, 32],
            seg_head_widths: [16, 32],
            semantic_hidden: 32,
            semantic_channels: 32,
            fusion_widths: [32, 48, 64],
            global_widths: [32, 48, 64, 64, 64, 64],
            mlp_hidden: 64,
            depth_bins: 64,
            rel_depth_min_mm: -400.0,
            rel_depth_max_mm: 400.0,
            depth_unit_mm: 25.0,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn joints(&self) -> usize {
        42
    }

    pub fn feature_size(&self) -> usize {
        self.crop_size / 4
    }

    pub fn segmentation_size(&self) -> usize {
        self.crop_size / 2
    }

    pub fn feature_channels(&self) -> usize {
        self.backbone_widths[3]
    }

    pub fn classes(&self) -> usize {
        PartTaxonomy::new(self.variant.taxonomy()).len()
    }

    /// Crop pixels per heatmap cell.
    pub fn heatmap_ratio(&self) -> f64 {
        self.crop_size as f64 / self.feature_size() as f64
    }

    /// Channels entering the pose and global heads.
    pub fn head_channels(&self) -> usize {
        let v = self.variant;
        match (v.fuses_visual(), v.uses_semantic()) {
            (true, _) => self.feature_channels() + self.semantic_channels,
            (false, true) => self.semantic_channels,
            (false, false) => self.feature_channels(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.crop_size % 32 != 0 || self.crop_size == 0 {
            return bad(format!("crop_size must be a positive multiple of 32, got {}", self.crop_size));
        }
        let widths = self
            .backbone_widths
            .iter()
            .chain(&self.seg_head_widths)
            .chain(&self.fusion_widths)
            .chain(&self.global_widths);
        if widths.chain([&self.semantic_hidden, &self.semantic_channels, &self.mlp_hidden]).any(|&w| w == 0) {
            return bad("layer widths must be positive".into());
        }
        if self.depth_bins < 2 || !(self.rel_depth_max_mm > self.rel_depth_min_mm) {
            return bad("relative depth needs at least two bins over a non-empty range".into());
        }
        if !(self.depth_unit_mm > 0.0) {
            return bad("depth_unit_mm must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    stages: Vec<ConvBlock>,
    crop_size: usize,
}

impl Backbone {
    fn new(store: &mut ParamStore, crop_size: usize, widths: [usize; 4], rng: &mut ChaCha8Rng) -> Self {
        let chans = [3, widths[0], widths[1], widths[2], widths[3]];
        let strides = [2, 2, 1, 1];
        let stages = (0..4)
            .map(|i| ConvBlock {
                conv: Conv2d::new(store, &format!("backbone.conv{i}"), chans[i], chans[i + 1], 3, strides[i], 1, rng),
                bn: Some(BatchNorm2d::new(store, &format!("backbone.bn{i}"), chans[i + 1])),
                relu: true,
            })
            .collect();
        Backbone { stages, crop_size }
    }

    pub fn forward(&self, ctx: &mut Ctx, image: Var) -> Result<FeatureMap> {
        let shape = ctx.tape.value(image).shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != self.crop_size || shape[3] != self.crop_size {
            return Err(Error::Contract(format!(
                "backbone expects [N, 3, {0}, {0}] images, got {shape:?}",
                self.crop_size
            )));
        }
        let mut x = image;
        for s in &self.stages {
            x = s.forward(ctx, x);
        }
        Ok(FeatureMap {
            var: x,
            role: FeatureRole::Visual,
        })
    }
}

#[derive(Clone, Debug)]
pub struct PoseHead {
    latent2d: Conv2d,
    latent_depth: Conv2d,
}

impl PoseHead {
    fn new(store: &mut ParamStore, channels: usize, joints: usize, rng: &mut ChaCha8Rng) -> Self {
        PoseHead {
            latent2d: Conv2d::new(store, "pose_head.latent2d", channels, joints, 1, 1, 0, rng),
            latent_depth: Conv2d::new(store, "pose_head.latent_depth", channels, joints, 1, 1, 0, rng),
        }
    }

    /// Latent 2D heatmaps and latent depth maps, both `[N, 2J, H_F, W_F]`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> (Var, Var) {
        (self.latent2d.forward(ctx, x), self.latent_depth.forward(ctx, x))
    }
}

#[derive(Clone, Debug)]
pub struct GlobalHead {
    convs: Vec<ConvBlock>,
    hand_mlp: [Linear; 2],
    depth_mlp: [Linear; 2],
}

impl GlobalHead {
    fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut chans = vec![cfg.head_channels()];
        chans.extend(cfg.global_widths);
        let convs = (0..6)
            .map(|i| ConvBlock {
                conv: Conv2d::same3(store, &format!("global_head.conv{i}"), chans[i], chans[i + 1], rng),
                bn: Some(BatchNorm2d::new(store, &format!("global_head.bn{i}"), chans[i + 1])),
                relu: true,
            })
            .collect();
        let latent = cfg.global_widths[5];
        let h = cfg.mlp_hidden;
        GlobalHead {
            convs,
            hand_mlp: [
                Linear::new(store, "global_head.hand0", latent, h, rng),
                Linear::new(store, "global_head.hand1", h, 2, rng),
            ],
            depth_mlp: [
                Linear::new(store, "global_head.depth0", latent, h, rng),
                Linear::new(store, "global_head.depth1", h, cfg.depth_bins, rng),
            ],
        }
    }

    /// Latent vector `[N, L]`, handedness logits `[N, 2]`, relative-depth bin logits `[N, D_z]`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> (Var, Var, Var) {
        let mut y = x;
        for (i, c) in self.convs.iter().enumerate() {
            y = c.forward(ctx, y);
            if i % 2 == 1 {
                y = ctx.tape.max_pool2(y);
            }
        }
        let latent = ctx.tape.mean_spatial(y);
        let mlp = |ctx: &mut Ctx, layers: &[Linear; 2]| {
            let h = layers[0].forward(ctx, latent);
            let h = ctx.tape.relu(h);
            layers[1].forward(ctx, h)
        };
        let hand = mlp(ctx, &self.hand_mlp);
        let depth = mlp(ctx, &self.depth_mlp);
        (latent, hand, depth)
    }
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub features: Var,
    pub seg_logits: Option<Var>,
    pub head_input: Var,
    pub latent2d: Var,
    pub probs2d: Var,
    /// `[N, 2J, 3]`: crop pixels and root-relative depth in mm.
    pub pose25d: Var,
    pub hand_logits: Var,
    pub handedness: Var,
    pub depth_probs: Var,
    pub rel_depth: Var,
    pub global_latent: Var,
}

/// Decoded predictions for one sample.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Presence scores indexed `[right, left]`.
    pub handedness: [f64; 2],
    pub rel_depth_dist: RelDepthDistribution,
    pub rel_depth_mm: f64,
    pub pose25d: Pose25D,
    pub segmentation: Option<SegmentationVolume>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub tree: KinematicTree,
    /// Origin line stored with the checkpoint, such as the run config hash.
    pub provenance: String,
    backbone: Backbone,
    seg_head: Option<SegmentationHead>,
    projection: Option<SemanticProjection>,
    fusion: Option<FusionNet>,
    pose_head: PoseHead,
    global_head: GlobalHead,
}

impl Model {
    /// Builds the model; every parameter is drawn from a generator seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let v = config.variant;
        let backbone = Backbone::new(&mut store, config.crop_size, config.backbone_widths, &mut rng);
        let seg_head = v.has_segmentation().then(|| {
            SegmentationHead::new(
                &mut store,
                config.feature_channels(),
                config.seg_head_widths,
                config.classes(),
                &mut rng,
            )
        });
        let projection = v.uses_semantic().then(|| {
            SemanticProjection::new(
                &mut store,
                config.classes(),
                config.semantic_hidden,
                config.semantic_channels,
                &mut rng,
            )
        });
        let fusion = v
            .uses_semantic()
            .then(|| FusionNet::new(&mut store, config.head_channels(), config.fusion_widths, &mut rng));
        let pose_head = PoseHead::new(&mut store, config.head_channels(), config.joints(), &mut rng);
        let global_head = GlobalHead::new(&mut store, &config, &mut rng);
        Ok(Model {
            config,
            params: store,
            tree: KinematicTree::hand21(),
            provenance: String::new(),
            backbone,
            seg_head,
            projection,
            fusion,
            pose_head,
            global_head,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, images: Var) -> Result<ForwardVars> {
        let cfg = &self.config;
        let v = cfg.variant;
        let visual = self.backbone.forward(ctx, images)?;
        let seg_logits = match &self.seg_head {
            Some(h) => Some(h.forward(ctx, visual)?),
            None => None,
        };
        let head_input = match (&self.projection, &self.fusion, seg_logits) {
            (Some(proj), Some(fusion), Some(logits)) => {
                let s = if v.quantizes() {
                    one_hot_argmax_node(ctx.tape, logits)
                } else {
                    logits
                };
                let semantic = proj.forward(ctx, s);
                let vis = v.fuses_visual().then_some(visual);
                fusion.forward(ctx, vis, semantic)?.var
            }
            _ => visual.var,
        };
        let (latent2d, latent_depth) = self.pose_head.forward(ctx, head_input);
        let probs2d = spatial_softmax_node(ctx.tape, latent2d)?;
        let xy = soft_argmax_node(ctx.tape, probs2d, cfg.heatmap_ratio())?;
        let composed = ctx.tape.mul(latent_depth, probs2d);
        let z = per_joint_depth_node(ctx.tape, composed, cfg.depth_unit_mm)?;
        let pose25d = assemble_pose_node(ctx.tape, xy, z);
        let (global_latent, hand_logits, depth_logits) = self.global_head.forward(ctx, head_input);
        let handedness = ctx.tape.sigmoid(hand_logits);
        let depth_probs = ctx.tape.softmax_rows(depth_logits);
        let rel_depth = expected_rel_depth_node(ctx.tape, depth_probs, cfg.rel_depth_min_mm, cfg.rel_depth_max_mm)?;
        Ok(ForwardVars {
            features: visual.var,
            seg_logits,
            head_input,
            latent2d,
            probs2d,
            pose25d,
            hand_logits,
            handedness,
            depth_probs,
            rel_depth,
            global_latent,
        })
    }

    /// Inference on `[N, 3, crop, crop]` images with values in `[0, 1]`.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<ModelOutput>> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &self.params, false);
        let x = ctx.tape.constant(images.clone());
        let vars = self.forward(&mut ctx, x)?;
        Ok(self.decode(&tape, &vars))
    }

    /// Reads per-sample outputs off a tape after [`Model::forward`].
    pub fn decode(&self, tape: &Tape, vars: &ForwardVars) -> Vec<ModelOutput> {
        let cfg = &self.config;
        let pose = tape.value(vars.pose25d);
        let hand = tape.value(vars.hand_logits);
        let probs = tape.value(vars.depth_probs);
        let rel = tape.value(vars.rel_depth);
        let n = pose.shape()[0];
        (0..n)
            .map(|s| {
                let joints = pose.sample(s).chunks(3).map(|c| [c[0], c[1], c[2]].map(f64::from)).collect();
                let h = hand.sample(s);
                ModelOutput {
                    handedness: [presence_score(h[0]), presence_score(h[1])],
                    rel_depth_dist: RelDepthDistribution {
                        p: probs.sample(s).iter().map(|&v| v as f64).collect(),
                        min_mm: cfg.rel_depth_min_mm,
                        max_mm: cfg.rel_depth_max_mm,
                    },
                    rel_depth_mm: rel.data()[s] as f64,
                    pose25d: Pose25D::new(joints, vec![true; cfg.joints()]),
                    segmentation: vars.seg_logits.map(|l| SegmentationVolume::from_tensor(tape.value(l), s)),
                }
            })
            .collect()
    }

    /// Freezes the backbone and segmentation head (the first stage of staged training).
    pub fn freeze_segmentation_path(&mut self, frozen: bool) -> usize {
        self.params.set_frozen("backbone.", frozen) + self.params.set_frozen("seg_head.", frozen)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = encode_checkpoint(self)?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_checkpoint(&bytes).map_err(|msg| Error::format(path, msg))
    }
}

/// Sigmoid of a presence logit in f64, kept strictly inside (0, 1) so
/// saturated logits still give a finite cross-entropy.
fn presence_score(logit: f32) -> f64 {
    let p = 1.0 / (1.0 + (-(logit as f64)).exp());
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

// ----------------------------------------------------------------------
// Checkpoint container
//
// All integers little endian.
//   magic "HSCK" | u32 version | u32 len | header JSON {model, provenance}
//   u32 count | count × (u16 len | name | u8 kind | u8 ndim | ndim × u32 | f32 data)
//   u32 CRC-32 of everything before it

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    provenance: String,
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        model: model.config.clone(),
        provenance: model.provenance.clone(),
    };
    let config = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    b.extend_from_slice(&(config.len() as u32).to_le_bytes());
    b.extend_from_slice(&config);
    let entries = model.params.entries();
    b.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        b.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        b.extend_from_slice(e.name.as_bytes());
        b.push(match e.kind {
            ParamKind::Weight => 0,
            ParamKind::Buffer => 1,
        });
        b.push(e.value.shape().len() as u8);
        for &d in e.value.shape() {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.value.data() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    Ok(b)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated checkpoint")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Model, String> {
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(format!("checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"));
    }
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err("checksum mismatch".into());
    }
    let mut r = Reader { buf: body, pos: 8 };
    let len = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(len)?).map_err(|e| format!("bad header: {e}"))?;
    let mut model = Model::new(header.model, 0).map_err(|e| e.to_string())?;
    model.provenance = header.provenance;
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(format!("{count} parameters stored, model has {}", model.params.len()));
    }
    for _ in 0..count {
        let nlen = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(nlen)?).map_err(|_| "parameter name is not UTF-8")?.to_string();
        let _kind = r.take(1)?[0];
        let ndim = r.take(1)?[0] as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let id = model.params.lookup(&name).ok_or_else(|| format!("unknown parameter {name}"))?;
        if model.params.value(id).shape() != shape.as_slice() {
            return Err(format!("parameter {name} has shape {shape:?}"));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        *model.params.value_mut(id) = Tensor::new(&shape, data);
    }
    if r.pos != body.len() {
        return Err("trailing bytes after parameters".into());
    }
    Ok(model)
}
