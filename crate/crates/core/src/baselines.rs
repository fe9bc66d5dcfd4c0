//! Two-layer comparison networks sized to match a preprocessing layer: a
//! convolutional first layer, or a dense hidden layer with optional
//! magnitude pruning. Both reuse the classifier's training recipe.

use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, ClassifierConfig, Layer, LayerShape, LayerSpec};
use crate::error::{Error, Result};
use crate::event::{PolarityMode, SensorGeometry};
use crate::metrics::ArchitectureCensus;

/// Pruning threshold applied to first-layer weights.
pub const PRUNE_THRESHOLD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Conv,
    FcHidden,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Conv => "conv",
            BaselineKind::FcHidden => "fc-hidden",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(BaselineKind::Conv),
            "fc-hidden" | "fc" => Ok(BaselineKind::FcHidden),
            other => Err(Error::Config(format!("unknown baseline {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Target hidden size, usually a strategy's output count.
    pub n_i: usize,
    /// First-layer magnitude threshold, applied after training.
    pub prune: Option<f64>,
}

/// Hidden sizes actually built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineShape {
    pub n_i_target: usize,
    pub n_i: usize,
    pub kernel: Option<usize>,
}

/// Kernel side whose valid output map has about `n_i` units:
/// `round(l + 1 - sqrt(n_i))`.
pub fn kernel_size(side: u16, n_i: usize) -> Result<usize> {
    let k = (side as f64 + 1.0 - (n_i as f64).sqrt()).round();
    if k < 1.0 || k > side as f64 {
        return Err(Error::Config(format!(
            "no kernel fits {n_i} hidden units on a side-{side} sensor (got {k})"
        )));
    }
    Ok(k as usize)
}

/// Untrained baseline with the classifier's hyperparameters. Only the
/// second layer has biases.
pub fn build_baseline(
    geometry: SensorGeometry,
    polarity: PolarityMode,
    config: &BaselineConfig,
    base: &ClassifierConfig,
) -> Result<(Classifier, BaselineShape)> {
    if !geometry.is_square() {
        return Err(Error::Geometry("baselines need a square sensor".into()));
    }
    if config.n_i == 0 {
        return Err(Error::Config("hidden size must be positive".into()));
    }
    let side = geometry.width as usize;
    let channels = polarity.channels();
    let d = side * side * channels;
    let (first, kernel) = match config.kind {
        BaselineKind::Conv => {
            let k = kernel_size(geometry.width, config.n_i)?;
            (LayerShape::Conv { side, channels, kernel: k }, Some(k))
        }
        BaselineKind::FcHidden => (LayerShape::Dense { n_in: d, n_out: config.n_i }, None),
    };
    let n_hidden = first.n_out();
    let mut cfg = base.clone();
    cfg.d_in = d;
    cfg.layers = vec![
        LayerSpec { shape: first, bias: false },
        LayerSpec {
            shape: LayerShape::Dense { n_in: n_hidden, n_out: base.n_labels },
            bias: true,
        },
    ];
    let shape = BaselineShape {
        n_i_target: config.n_i,
        n_i: n_hidden,
        kernel,
    };
    Ok((Classifier::new(cfg)?, shape))
}

/// Zeroes first-layer weights with `|w| < threshold`; returns how many
/// weights are zero afterwards.
pub fn prune(classifier: &mut Classifier, threshold: f64) -> usize {
    let w = &mut classifier.layers[0].w;
    for v in w.iter_mut() {
        if v.abs() < threshold {
            *v = 0.0;
        }
    }
    w.iter().filter(|v| **v == 0.0).count()
}

fn hidden_fan_in(layer: &Layer) -> Vec<usize> {
    match layer.spec.shape {
        LayerShape::Dense { n_in, n_out } => (0..n_out)
            .map(|j| (0..n_in).filter(|&i| layer.w[i * n_out + j] != 0.0).count())
            .collect(),
        LayerShape::Conv { .. } => {
            let live = layer.w.iter().filter(|w| **w != 0.0).count();
            vec![live; layer.spec.shape.n_out()]
        }
    }
}

/// Census of a two-layer baseline; zero weights are not synapses.
pub fn census(classifier: &Classifier) -> ArchitectureCensus {
    let first = &classifier.layers[0];
    let second = &classifier.layers[1];
    let hidden = first.spec.shape.n_out();
    let labels = second.spec.shape.n_out();
    let mut fan_in = hidden_fan_in(first);
    let out_fan_in: Vec<usize> = (0..labels)
        .map(|j| (0..hidden).filter(|&i| second.w[i * labels + j] != 0.0).count())
        .collect();
    let input_synapses = first.synapse_count();
    let classifier_synapses: usize = out_fan_in.iter().sum();
    fan_in.extend(&out_fan_in);
    ArchitectureCensus {
        neurons: hidden + labels,
        preprocess_neurons: hidden,
        classifier_neurons: labels,
        input_synapses,
        wta_synapses: 0,
        classifier_synapses,
        synapses: input_synapses + classifier_synapses,
        max_fan_in: fan_in.iter().copied().max().unwrap_or(0),
        mean_fan_in: fan_in.iter().sum::<usize>() as f64 / fan_in.len().max(1) as f64,
    }
}

/// Distinct trainable parameters (conv weights are shared).
pub fn parameter_count(classifier: &Classifier) -> usize {
    classifier.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
}
