//! The four backbones, their ImageNet checkpoints and the classifier head
//! swap.

mod architectures;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use architectures::{build, BackboneScale, Blueprint};

use crate::error::{Error, Result};
use crate::nn::io::{read_weights, save_weights};
use crate::nn::{softmax_rows, Network, NodeId, Tensor};
use crate::preprocess::ImageTensor;
use crate::seeding::rng_for;

/// Environment variable naming the local pretrained-weight cache.
pub const WEIGHTS_DIR_ENV: &str = "LEAFBENCH_WEIGHTS_DIR";
pub const IMAGENET_CLASSES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Architecture {
    EfficientNetB3,
    InceptionV3,
    ResNet50,
    Vgg16,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::EfficientNetB3,
        Architecture::InceptionV3,
        Architecture::ResNet50,
        Architecture::Vgg16,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::EfficientNetB3 => "EfficientNet-B3",
            Architecture::InceptionV3 => "InceptionV3",
            Architecture::ResNet50 => "ResNet50",
            Architecture::Vgg16 => "VGG16",
        }
    }

    /// File-system friendly form.
    pub fn slug(self) -> &'static str {
        match self {
            Architecture::EfficientNetB3 => "efficientnet_b3",
            Architecture::InceptionV3 => "inception_v3",
            Architecture::ResNet50 => "resnet50",
            Architecture::Vgg16 => "vgg16",
        }
    }

    pub fn input_size(self) -> usize {
        match self {
            Architecture::EfficientNetB3 => 300,
            Architecture::InceptionV3 => 299,
            Architecture::ResNet50 | Architecture::Vgg16 => 224,
        }
    }

    /// Smallest square input the topology accepts.
    pub fn min_input_size(self) -> usize {
        match self {
            Architecture::InceptionV3 => 75,
            _ => 32,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Architecture::ALL
            .into_iter()
            .find(|a| {
                let name: String = a.name().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
                name.to_ascii_lowercase() == key
            })
            .ok_or_else(|| Error::UnknownArchitecture(s.to_string()))
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::parse(s)
    }
}

impl TryFrom<String> for Architecture {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Architecture::parse(&s)
    }
}

impl From<Architecture> for String {
    fn from(a: Architecture) -> String {
        a.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: Architecture,
    pub input_size: usize,
    pub approx_params_millions: f64,
    pub pretrained_source: String,
}

impl ArchitectureSpec {
    pub fn of(arch: Architecture) -> Self {
        let approx_params_millions = match arch {
            Architecture::EfficientNetB3 => 12.0,
            Architecture::InceptionV3 => 23.8,
            Architecture::ResNet50 => 25.6,
            Architecture::Vgg16 => 138.0,
        };
        ArchitectureSpec {
            name: arch,
            input_size: arch.input_size(),
            approx_params_millions,
            pretrained_source: format!("imagenet-1k/{}", arch.slug()),
        }
    }
}

pub fn registry() -> Vec<ArchitectureSpec> {
    Architecture::ALL.into_iter().map(ArchitectureSpec::of).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadActivation {
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub out_classes: usize,
    pub activation: HeadActivation,
}

/// A backbone plus its classification layer.
pub struct ModelHandle {
    pub spec: ArchitectureSpec,
    pub scale: BackboneScale,
    pub head: ClassifierHead,
    network: Network,
    head_start: NodeId,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("arch", &self.spec.name)
            .field("scale", &self.scale)
            .field("head", &self.head)
            .field("input", &self.network.input_shape())
            .finish()
    }
}

impl ModelHandle {
    /// Builds the topology with its 1000-way ImageNet classifier without
    /// allocating weights.
    pub fn skeleton(spec: &ArchitectureSpec, scale: BackboneScale, input_size: usize) -> Result<Self> {
        if input_size < spec.name.min_input_size() {
            return Err(Error::InvalidConfig(format!(
                "{} needs inputs of at least {} pixels, got {input_size}",
                spec.name,
                spec.name.min_input_size()
            )));
        }
        let bp = build(spec.name, scale, input_size, IMAGENET_CLASSES)?;
        Ok(ModelHandle {
            spec: spec.clone(),
            scale,
            head: ClassifierHead {
                out_classes: IMAGENET_CLASSES,
                activation: HeadActivation::Softmax,
            },
            network: bp.network,
            head_start: bp.head_start,
        })
    }

    /// Skeleton with every weight drawn from the seeded initializer.
    pub fn random(spec: &ArchitectureSpec, scale: BackboneScale, input_size: usize, seed: u64) -> Result<Self> {
        let mut m = Self::skeleton(spec, scale, input_size)?;
        m.network.initialize(&mut rng_for(seed, "init", spec.name.slug().as_bytes()));
        Ok(m)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn input_size(&self) -> usize {
        self.network.input_shape().h
    }

    pub fn head_start(&self) -> NodeId {
        self.head_start
    }

    pub fn param_count(&self) -> usize {
        self.network.param_count()
    }

    pub fn backbone_param_count(&self) -> usize {
        self.network.param_count_before(self.head_start)
    }

    pub fn head_param_count(&self) -> usize {
        self.param_count() - self.backbone_param_count()
    }

    pub fn set_backbone_frozen(&mut self, frozen: bool) {
        self.network.set_frozen(self.head_start, frozen);
    }

    /// Softmax probabilities, one row per sample.
    pub fn predict_proba(&self, batch: &Tensor) -> Result<Vec<Vec<f64>>> {
        Ok(softmax_rows(&self.network.forward(batch)?))
    }

    pub fn predict_class(&self, img: &ImageTensor) -> Result<usize> {
        let probs = self.predict_proba(&img.to_tensor())?;
        Ok(argmax(&probs[0]))
    }

    pub fn save(&self, path: &Path, tag: &str) -> Result<()> {
        save_weights(path, &self.network, tag)
    }

    /// Loads weights written by [`ModelHandle::save`] into this topology.
    pub fn load(&mut self, path: &Path) -> Result<String> {
        let wf = read_weights(path)?;
        wf.apply(&mut self.network)?;
        Ok(wf.tag)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict_class(model: &ModelHandle, img: &ImageTensor) -> Result<usize> {
    model.predict_class(img)
}

/// Cache directory from the environment, if set.
pub fn weights_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(WEIGHTS_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

pub fn pretrained_file_name(arch: Architecture, scale: BackboneScale) -> String {
    format!("{}__imagenet__{}.lbw", arch.slug(), scale.tag())
}

pub fn pretrained_tag(spec: &ArchitectureSpec, scale: BackboneScale) -> String {
    format!("{}@{}", spec.pretrained_source, scale.tag())
}

/// Writes `model` into `dir` as the pretrained checkpoint for its
/// architecture and scale.
pub fn store_pretrained(dir: &Path, model: &ModelHandle) -> Result<PathBuf> {
    let path = dir.join(pretrained_file_name(model.spec.name, model.scale));
    model.save(&path, &pretrained_tag(&model.spec, model.scale))?;
    Ok(path)
}

/// Full-size model initialized from the cache named by the environment.
pub fn load_pretrained(spec: &ArchitectureSpec) -> Result<ModelHandle> {
    let dir = weights_dir_from_env()
        .ok_or_else(|| Error::WeightsUnavailable(format!("{WEIGHTS_DIR_ENV} is not set and no download is possible")))?;
    load_pretrained_from(&dir, spec, BackboneScale::FULL, spec.input_size)
}

pub fn load_pretrained_from(
    dir: &Path,
    spec: &ArchitectureSpec,
    scale: BackboneScale,
    input_size: usize,
) -> Result<ModelHandle> {
    let path = dir.join(pretrained_file_name(spec.name, scale));
    if !path.is_file() {
        return Err(Error::WeightsUnavailable(format!(
            "no cached checkpoint at {} and no download is possible",
            path.display()
        )));
    }
    let mut model = ModelHandle::skeleton(spec, scale, input_size)?;
    let tag = model.load(&path)?;
    let want = pretrained_tag(spec, scale);
    if tag != want {
        return Err(Error::BadWeights(format!("{}: tag {tag}, expected {want}", path.display())));
    }
    Ok(model)
}

/// Replaces the original classifier with a freshly initialized dense layer
/// of `num_classes` outputs. All parameters are left trainable.
pub fn adapt_head(mut model: ModelHandle, num_classes: usize, seed: u64) -> Result<ModelHandle> {
    if num_classes < 2 {
        return Err(Error::InvalidClassCount(num_classes));
    }
    model.network.truncate(model.head_start)?;
    let mut rng = rng_for(seed, "head", model.spec.name.slug().as_bytes());
    model.network.append_dense("head", num_classes, &mut rng);
    model.network.set_frozen(model.network.nodes().len(), false);
    model.head = ClassifierHead {
        out_classes: num_classes,
        activation: HeadActivation::Softmax,
    };
    Ok(model)
}


#[cfg(test)]
mod count_tests {
    use super::*;

    fn full(arch: Architecture) -> ModelHandle {
        ModelHandle::skeleton(&ArchitectureSpec::of(arch), BackboneScale::FULL, arch.input_size()).unwrap()
    }

    #[test]
    fn full_size_parameter_counts() {
        for arch in Architecture::ALL {
            let m = full(arch);
            eprintln!("{arch}: total {} backbone {} head {}", m.param_count(), m.backbone_param_count(), m.head_param_count());
        }
        assert_eq!(full(Architecture::Vgg16).param_count(), 138_357_544);
        assert_eq!(full(Architecture::InceptionV3).param_count(), 23_851_784);
    }
}
