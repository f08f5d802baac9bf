use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{
    global_avg_pool, global_avg_pool_backward, BatchNorm2d, Buffer, Conv2d, Linear, MaxPool, Param,
    Relu,
};
use super::tensor::{Matrix, Tensor};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    /// Two 3x3 convolutions per block, 7x7 stem.
    ResnetBasic,
    /// 1x1 / 3x3 / 1x1 blocks with 4x expansion, 7x7 stem.
    ResnetBottleneck,
    /// Basic blocks behind a 3x3 stride-2 stem; desk-scale.
    MiniResnet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub family: Family,
    pub stage_depths: Vec<usize>,
    pub base_width: usize,
    pub input_size: usize,
    #[serde(default = "two")]
    pub num_classes: usize,
    #[serde(default)]
    pub preset_name: Option<String>,
}

fn two() -> usize {
    2
}

impl BackboneSpec {
    pub fn mini(base_width: usize, input_size: usize) -> Self {
        BackboneSpec {
            family: Family::MiniResnet,
            stage_depths: vec![1, 1],
            base_width,
            input_size,
            num_classes: 2,
            preset_name: Some("mini".into()),
        }
    }

    /// Named presets: `mini`, `resnet18-like`, `resnet34-like`,
    /// `resnet50-like`.
    pub fn preset(name: &str, input_size: usize) -> Result<Self> {
        let (family, depths, width) = match name {
            "mini" => return Ok(Self::mini(8, input_size)),
            "resnet18-like" => (Family::ResnetBasic, vec![2, 2, 2, 2], 64),
            "resnet34-like" => (Family::ResnetBasic, vec![3, 4, 6, 3], 64),
            "resnet50-like" => (Family::ResnetBottleneck, vec![3, 4, 6, 3], 64),
            other => return Err(Error::UnknownBackbone(other.to_string())),
        };
        Ok(BackboneSpec {
            family,
            stage_depths: depths,
            base_width: width,
            input_size,
            num_classes: 2,
            preset_name: Some(name.to_string()),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidBackbone(m));
        if self.stage_depths.is_empty() || self.stage_depths.contains(&0) {
            return bad(format!("stage depths must be >= 1, got {:?}", self.stage_depths));
        }
        if self.base_width == 0 {
            return bad("base_width must be >= 1".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes must be >= 2".into());
        }
        // stem and pool each halve the input, then every stage after the first
        let reductions = 2 + self.stage_depths.len() - 1;
        if self.input_size < (1 << reductions) {
            return bad(format!(
                "input_size {} too small for {} downsamplings",
                self.input_size, reductions
            ));
        }
        Ok(())
    }

    pub fn expansion(&self) -> usize {
        match self.family {
            Family::ResnetBottleneck => 4,
            _ => 1,
        }
    }

    pub fn feature_width(&self) -> usize {
        self.base_width * (1 << (self.stage_depths.len() - 1)) * self.expansion()
    }

    /// Weighted layers along the main path: stem + block convolutions + head.
    pub fn weighted_depth(&self) -> usize {
        let per_block = match self.family {
            Family::ResnetBottleneck => 3,
            _ => 2,
        };
        1 + per_block * self.stage_depths.iter().sum::<usize>() + 1
    }

    /// Trainable parameter count, computed from the layout.
    pub fn parameter_count(&self) -> usize {
        Model::layout(self)
            .into_iter()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(_, shape, _)| shape.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone)]
struct Downsample {
    conv: Conv2d,
    bn: BatchNorm2d,
}

#[derive(Debug, Clone)]
struct Block {
    convs: Vec<Conv2d>,
    bns: Vec<BatchNorm2d>,
    relus: Vec<Relu>,
    downsample: Option<Downsample>,
    out_relu: Relu,
}

impl Block {
    fn basic(name: &str, inp: usize, width: usize, stride: usize) -> Self {
        let downsample = (stride != 1 || inp != width).then(|| Downsample {
            conv: Conv2d::new(&format!("{name}.downsample.0"), inp, width, 1, stride, 0),
            bn: BatchNorm2d::new(&format!("{name}.downsample.1"), width),
        });
        Block {
            convs: vec![
                Conv2d::new(&format!("{name}.conv1"), inp, width, 3, stride, 1),
                Conv2d::new(&format!("{name}.conv2"), width, width, 3, 1, 1),
            ],
            bns: vec![
                BatchNorm2d::new(&format!("{name}.bn1"), width),
                BatchNorm2d::new(&format!("{name}.bn2"), width),
            ],
            relus: vec![Relu::default()],
            downsample,
            out_relu: Relu::default(),
        }
    }

    fn bottleneck(name: &str, inp: usize, width: usize, stride: usize) -> Self {
        let out = width * 4;
        let downsample = (stride != 1 || inp != out).then(|| Downsample {
            conv: Conv2d::new(&format!("{name}.downsample.0"), inp, out, 1, stride, 0),
            bn: BatchNorm2d::new(&format!("{name}.downsample.1"), out),
        });
        Block {
            convs: vec![
                Conv2d::new(&format!("{name}.conv1"), inp, width, 1, 1, 0),
                Conv2d::new(&format!("{name}.conv2"), width, width, 3, stride, 1),
                Conv2d::new(&format!("{name}.conv3"), width, out, 1, 1, 0),
            ],
            bns: vec![
                BatchNorm2d::new(&format!("{name}.bn1"), width),
                BatchNorm2d::new(&format!("{name}.bn2"), width),
                BatchNorm2d::new(&format!("{name}.bn3"), out),
            ],
            relus: vec![Relu::default(), Relu::default()],
            downsample,
            out_relu: Relu::default(),
        }
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for i in 0..=last {
            h = self.bns[i].infer(&self.convs[i].infer(&h));
            if i < last {
                h = Relu::infer(&h);
            }
        }
        match &self.downsample {
            Some(ds) => h.add_assign(&ds.bn.infer(&ds.conv.infer(x))),
            None => h.add_assign(x),
        }
        Relu::infer(&h)
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for i in 0..=last {
            h = self.bns[i].forward(&self.convs[i].forward(&h));
            if i < last {
                h = self.relus[i].forward(&h);
            }
        }
        match &mut self.downsample {
            Some(ds) => h.add_assign(&ds.bn.forward(&ds.conv.forward(x))),
            None => h.add_assign(x),
        }
        self.out_relu.forward(&h)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d_sum = self.out_relu.backward(dy);
        let mut d = d_sum.clone();
        let last = self.convs.len() - 1;
        for i in (0..=last).rev() {
            if i < last {
                d = self.relus[i].backward(&d);
            }
            d = self.convs[i].backward(&self.bns[i].backward(&d));
        }
        match &mut self.downsample {
            Some(ds) => d.add_assign(&ds.conv.backward(&ds.bn.backward(&d_sum))),
            None => d.add_assign(&d_sum),
        }
        d
    }

    fn visit(&mut self, f: &mut dyn FnMut(Slot<'_>)) {
        let n = self.convs.len();
        for i in 0..n {
            f(Slot::Param(&mut self.convs[i].weight, ParamRole::Conv));
            visit_bn(&mut self.bns[i], f);
        }
        if let Some(ds) = &mut self.downsample {
            f(Slot::Param(&mut ds.conv.weight, ParamRole::Conv));
            visit_bn(&mut ds.bn, f);
        }
    }
}

fn visit_bn(bn: &mut BatchNorm2d, f: &mut dyn FnMut(Slot<'_>)) {
    f(Slot::Param(&mut bn.gamma, ParamRole::BnWeight));
    f(Slot::Param(&mut bn.beta, ParamRole::BnBias));
    f(Slot::Buffer(&mut bn.running_mean));
    f(Slot::Buffer(&mut bn.running_var));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParamRole {
    Conv,
    BnWeight,
    BnBias,
    FcWeight,
    FcBias,
}

pub(crate) enum Slot<'a> {
    Param(&'a mut Param, ParamRole),
    Buffer(&'a mut Buffer),
}

/// How a model's parameters are initialised.
#[derive(Debug, Clone)]
pub enum Init {
    Random(u64),
    FromArchive(super::WeightArchive),
}

/// A residual CNN classifier.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: BackboneSpec,
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    stem_relu: Relu,
    pool: MaxPool,
    blocks: Vec<Block>,
    fc: Linear,
    feature_shape: (usize, usize, usize, usize),
}

/// Batch of images, `N x H x W x 3`, already normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn new(n: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * size * size * 3 {
            return Err(Error::Shape(format!(
                "batch buffer has {} values, expected {n}x{size}x{size}x3",
                data.len()
            )));
        }
        Ok(Batch { n, size, data })
    }

    fn to_tensor(&self) -> Tensor {
        let s = self.size;
        let mut t = Tensor::zeros(3, self.n, s, s);
        for n in 0..self.n {
            for y in 0..s {
                for x in 0..s {
                    for c in 0..3 {
                        let i = t.idx(c, n, y, x);
                        t.data[i] = self.data[((n * s + y) * s + x) * 3 + c];
                    }
                }
            }
        }
        t
    }
}

impl Model {
    fn skeleton(spec: &BackboneSpec) -> Model {
        let (stem, stem_out) = match spec.family {
            Family::MiniResnet => (Conv2d::new("conv1", 3, spec.base_width, 3, 2, 1), spec.base_width),
            _ => (Conv2d::new("conv1", 3, spec.base_width, 7, 2, 3), spec.base_width),
        };
        let mut blocks = Vec::new();
        let mut inp = stem_out;
        for (si, &depth) in spec.stage_depths.iter().enumerate() {
            let width = spec.base_width << si;
            for bi in 0..depth {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                let name = format!("layer{}.{}", si + 1, bi);
                let block = match spec.family {
                    Family::ResnetBottleneck => Block::bottleneck(&name, inp, width, stride),
                    _ => Block::basic(&name, inp, width, stride),
                };
                inp = width * spec.expansion();
                blocks.push(block);
            }
        }
        Model {
            spec: spec.clone(),
            stem,
            stem_bn: BatchNorm2d::new("bn1", stem_out),
            stem_relu: Relu::default(),
            pool: MaxPool::default(),
            blocks,
            fc: Linear::new("fc", inp, spec.num_classes),
            feature_shape: (0, 0, 0, 0),
        }
    }

    /// `(name, shape, trainable)` for every tensor in archive order.
    pub fn layout(spec: &BackboneSpec) -> Vec<(String, Vec<usize>, bool)> {
        let mut m = Self::skeleton(spec);
        let mut out = Vec::new();
        m.visit(&mut |slot| match slot {
            Slot::Param(p, _) => out.push((p.name.clone(), p.shape.clone(), true)),
            Slot::Buffer(b) => out.push((b.name.clone(), b.shape.clone(), false)),
        });
        out
    }

    pub(crate) fn visit(&mut self, f: &mut dyn FnMut(Slot<'_>)) {
        f(Slot::Param(&mut self.stem.weight, ParamRole::Conv));
        visit_bn(&mut self.stem_bn, f);
        for b in &mut self.blocks {
            b.visit(f);
        }
        f(Slot::Param(&mut self.fc.weight, ParamRole::FcWeight));
        f(Slot::Param(&mut self.fc.bias, ParamRole::FcBias));
    }

    fn init_random(&mut self, seed: u64) {
        let mut k = 0u64;
        self.visit(&mut |slot| {
            k += 1;
            let mut g = rng::rng_for(seed, &[k]);
            if let Slot::Param(p, role) = slot {
                match role {
                    ParamRole::Conv => {
                        // He normal, fan-out mode
                        let fan_out = p.shape[0] * p.shape[2] * p.shape[3];
                        let std = (2.0 / fan_out as f64).sqrt();
                        for v in &mut p.value {
                            *v = std * g.sample::<f64, _>(StandardNormal);
                        }
                    }
                    ParamRole::FcWeight | ParamRole::FcBias => {
                        let fan_in = if role == ParamRole::FcWeight { p.shape[1] } else { p.len() };
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        for v in &mut p.value {
                            *v = g.random_range(-bound..bound);
                        }
                    }
                    ParamRole::BnWeight | ParamRole::BnBias => {}
                }
            }
        });
    }

    pub fn num_parameters(&mut self) -> usize {
        let mut n = 0;
        self.visit(&mut |slot| {
            if let Slot::Param(p, _) = slot {
                n += p.len();
            }
        });
        n
    }

    /// Visit every trainable parameter. `true` marks the classifier head.
    pub fn for_each_param(&mut self, mut f: impl FnMut(&mut Param, bool)) {
        self.visit(&mut |slot| {
            if let Slot::Param(p, role) = slot {
                f(p, matches!(role, ParamRole::FcWeight | ParamRole::FcBias));
            }
        });
    }

    pub fn zero_grad(&mut self) {
        self.for_each_param(|p, _| p.grad.fill(0.0));
    }

    /// All tensors, parameters and buffers, as `(name, shape, values)`.
    pub fn state(&mut self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        self.visit(&mut |slot| match slot {
            Slot::Param(p, _) => out.push((p.name.clone(), p.shape.clone(), p.value.clone())),
            Slot::Buffer(b) => out.push((b.name.clone(), b.shape.clone(), b.value.clone())),
        });
        out
    }

    /// Overwrite parameters and buffers from named tensors. Every tensor of
    /// the model must be present with a matching shape.
    pub fn load_state(&mut self, archive: &super::WeightArchive) -> Result<()> {
        let mut failure: Option<Error> = None;
        self.visit(&mut |slot| {
            if failure.is_some() {
                return;
            }
            let (name, shape, dst) = match slot {
                Slot::Param(p, _) => (p.name.clone(), p.shape.clone(), &mut p.value),
                Slot::Buffer(b) => (b.name.clone(), b.shape.clone(), &mut b.value),
            };
            match archive.get(&name) {
                None => {
                    failure = Some(Error::ArchiveTensor {
                        name,
                        message: "missing from archive".into(),
                    })
                }
                Some(t) if t.shape != shape => {
                    failure = Some(Error::ArchiveTensor {
                        message: format!("shape {:?} does not match model shape {:?}", t.shape, shape),
                        name,
                    })
                }
                Some(t) => dst.copy_from_slice(&t.data),
            }
        });
        failure.map_or(Ok(()), Err)
    }

    /// Evaluation-mode forward pass (batch-norm uses running statistics).
    pub fn forward(&self, batch: &Batch) -> Result<Matrix> {
        self.check_batch(batch)?;
        let x = batch.to_tensor();
        let mut h = Relu::infer(&self.stem_bn.infer(&self.stem.infer(&x)));
        h = MaxPool::infer(&h);
        for b in &self.blocks {
            h = b.infer(&h);
        }
        Ok(self.fc.infer(&global_avg_pool(&h)))
    }

    /// Training-mode forward pass; caches activations for [`Model::backward`].
    pub fn forward_train(&mut self, batch: &Batch) -> Result<Matrix> {
        self.check_batch(batch)?;
        let x = batch.to_tensor();
        let mut h = self.stem.forward(&x);
        h = self.stem_relu.forward(&self.stem_bn.forward(&h));
        h = self.pool.forward(&h);
        for b in &mut self.blocks {
            h = b.forward(&h);
        }
        self.feature_shape = (h.c, h.n, h.h, h.w);
        Ok(self.fc.forward(&global_avg_pool(&h)))
    }

    /// Accumulate parameter gradients given `dL/dlogits`.
    pub fn backward(&mut self, dlogits: &Matrix) {
        let df = self.fc.backward(dlogits);
        let (c, n, h, w) = self.feature_shape;
        let mut d = global_avg_pool_backward(&df, c, n, h, w);
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d);
        }
        d = self.pool.backward(&d);
        d = self.stem_bn.backward(&self.stem_relu.backward(&d));
        self.stem.backward(&d);
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.size != self.spec.input_size {
            return Err(Error::Shape(format!(
                "input is {0}x{0}, model expects {1}x{1}",
                batch.size, self.spec.input_size
            )));
        }
        if batch.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input batch contains NaN or infinity".into()));
        }
        Ok(())
    }

    /// Number of residual blocks per stage.
    pub fn stage_structure(&self) -> Vec<usize> {
        let mut counts = vec![0; self.spec.stage_depths.len()];
        for b in &self.blocks {
            let stage: usize = b.convs[0].weight.name[5..]
                .split('.')
                .next()
                .and_then(|s| s.parse().ok())
                .unwrap_or(1);
            counts[stage - 1] += 1;
        }
        counts
    }
}

/// Build a model from a spec, either randomly initialised from a seed or
/// loaded from an archive.
pub fn build_model(spec: &BackboneSpec, init: Init) -> Result<Model> {
    spec.validate()?;
    let mut m = Model::skeleton(spec);
    match init {
        Init::Random(seed) => m.init_random(seed),
        Init::FromArchive(archive) => m.load_state(&archive)?,
    }
    Ok(m)
}

/// Backbone slots the comparison harness can name.
pub const REGISTRY: &[(&str, bool)] = &[
    ("mini", true),
    ("resnet18-like", true),
    ("resnet34-like", true),
    ("resnet50-like", true),
    ("densenet121", false),
    ("efficientnet-b4", false),
];

/// Resolve a registry name to a spec; unimplemented slots report
/// [`Error::BackboneUnavailable`].
pub fn lookup_backbone(name: &str, input_size: usize) -> Result<BackboneSpec> {
    match REGISTRY.iter().find(|(n, _)| *n == name) {
        None => Err(Error::UnknownBackbone(name.to_string())),
        Some((_, false)) => Err(Error::BackboneUnavailable(name.to_string())),
        Some(_) => BackboneSpec::preset(name, input_size),
    }
}
