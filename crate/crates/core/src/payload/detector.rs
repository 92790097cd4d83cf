use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{Graph, Node, Op, Padding, ATTR_PADDING, ATTR_SHAPE, ATTR_STRIDE};
use crate::tensor::Tensor;

use super::PayloadError;

pub const INPUT_NAME: &str = "input";
pub const OUTPUT_NAME: &str = "prob";
/// Node holding the pre-sigmoid logit.
pub const LOGIT_NAME: &str = "fc";

/// One convolution stage: `kernel`×`kernel` same-padded conv, then ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Stage {
    pub const fn new(filters: usize, stride: usize) -> Self {
        Stage { filters, kernel: 3, stride }
    }
}

/// Trigger-detector topology. Each tapped stage output is global-max-pooled;
/// the pooled vectors are concatenated and fed to a one-unit Dense + Sigmoid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorArch {
    /// Square input side in pixels; inputs are `input_size × input_size × 3`.
    pub input_size: usize,
    pub stages: Vec<Stage>,
    /// Zero-based stage indices whose outputs are pooled, strictly ascending.
    pub taps: Vec<usize>,
}

const STRIDES: [usize; 5] = [2, 3, 2, 2, 1];
const TAPS: [usize; 3] = [1, 2, 4];

impl DetectorArch {
    /// Full-size detector: 160×160 input, 30,625 parameters, taps with
    /// receptive fields 7, 19 and 91 pixels.
    pub fn reference() -> Self {
        Self::with_filters(160, [16, 16, 32, 32, 48])
    }

    /// The reference topology at 64×64. Parameter count does not depend on
    /// the input size, so this is still 30,625 parameters.
    pub fn desk() -> Self {
        Self::with_filters(64, [16, 16, 32, 32, 48])
    }

    fn with_filters(input_size: usize, filters: [usize; 5]) -> Self {
        DetectorArch {
            input_size,
            stages: filters.iter().zip(STRIDES).map(|(&f, s)| Stage::new(f, s)).collect(),
            taps: TAPS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), PayloadError> {
        let bad = |msg: String| Err(PayloadError::InvalidArch(msg));
        if self.input_size == 0 {
            return bad("input size is zero".into());
        }
        if self.stages.is_empty() {
            return bad("no stages".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.filters == 0 || s.kernel == 0 || s.stride == 0 {
                return bad(format!("stage {i} has a zero filters/kernel/stride field"));
            }
        }
        if self.taps.is_empty() {
            return bad("no taps".into());
        }
        if self.taps.windows(2).any(|w| w[0] >= w[1]) {
            return bad("taps must be strictly ascending".into());
        }
        if let Some(&t) = self.taps.iter().find(|&&t| t >= self.stages.len()) {
            return bad(format!("tap {t} out of range for {} stages", self.stages.len()));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_size, self.input_size, 3]
    }

    /// Receptive field in input pixels of one unit of stage `stage`'s output.
    pub fn receptive_field(&self, stage: usize) -> usize {
        let mut field = 1;
        let mut jump = 1;
        for s in &self.stages[..=stage] {
            field += (s.kernel - 1) * jump;
            jump *= s.stride;
        }
        field
    }

    /// Spatial side of each stage's output.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        let mut side = self.input_size;
        self.stages
            .iter()
            .map(|s| {
                side = side.div_ceil(s.stride);
                side
            })
            .collect()
    }

    pub fn pooled_features(&self) -> usize {
        self.taps.iter().map(|&t| self.stages[t].filters).sum()
    }

    pub fn param_count(&self) -> usize {
        let mut cin = 3;
        let mut total = 0;
        for s in &self.stages {
            total += s.kernel * s.kernel * cin * s.filters + s.filters;
            cin = s.filters;
        }
        total + self.pooled_features() + 1
    }

    /// Parses the `key = value` text form written by `Display`.
    pub fn parse(text: &str) -> Result<Self, PayloadError> {
        let mut input_size = None;
        let mut stages = None;
        let mut taps = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| PayloadError::InvalidArch(format!("line {}: {what}", lineno + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("expected an integer"));
            match key.trim() {
                "input_size" => input_size = Some(num(value)?),
                "stages" => {
                    let mut parsed = Vec::new();
                    for item in value.split(',') {
                        let fields: Vec<usize> = item.split('/').map(num).collect::<Result<_, _>>()?;
                        parsed.push(match fields[..] {
                            [filters, stride] => Stage::new(filters, stride),
                            [filters, stride, kernel] => Stage { filters, kernel, stride },
                            _ => return Err(bad("stage must be filters/stride[/kernel]")),
                        });
                    }
                    stages = Some(parsed);
                }
                "taps" => taps = Some(value.split(',').map(num).collect::<Result<Vec<_>, _>>()?),
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| PayloadError::InvalidArch(format!("missing `{k}`"));
        let arch = DetectorArch {
            input_size: input_size.ok_or_else(|| missing("input_size"))?,
            stages: stages.ok_or_else(|| missing("stages"))?,
            taps: taps.ok_or_else(|| missing("taps"))?,
        };
        arch.validate()?;
        Ok(arch)
    }
}

impl fmt::Display for DetectorArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input_size = {}", self.input_size)?;
        let stages: Vec<String> = self
            .stages
            .iter()
            .map(|s| format!("{}/{}/{}", s.filters, s.stride, s.kernel))
            .collect();
        writeln!(f, "stages = {}", stages.join(", "))?;
        let taps: Vec<String> = self.taps.iter().map(usize::to_string).collect();
        writeln!(f, "taps = {}", taps.join(", "))
    }
}

/// He-normal weights (std `sqrt(2 / fan_in)`) of the given shape.
pub(crate) fn he_normal(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::from_f32(shape, data).expect("length matches shape")
}

/// Appends `conv -> relu` with weights `[k, k, cin, cout]` and returns the ReLU index.
pub(crate) fn add_conv_relu(
    graph: &mut Graph,
    name: &str,
    input: usize,
    weights: Tensor,
    bias: Tensor,
    stride: usize,
    padding: Padding,
) -> Result<usize, PayloadError> {
    let w = graph.add(Node::constant(format!("{name}_w"), weights))?;
    let b = graph.add(Node::constant(format!("{name}_b"), bias))?;
    let conv = graph.add(
        Node::new(name, Op::Conv2D)
            .with_inputs(&[input, w, b])
            .with_attr(ATTR_STRIDE, stride as u32)
            .with_attr(ATTR_PADDING, padding),
    )?;
    Ok(graph.add(Node::new(format!("{name}_relu"), Op::ReLU).with_inputs(&[conv]))?)
}

/// Builds the detector graph with He-normal weights and zero biases drawn
/// from `seed`. Node names are stable across seeds; `input` is the image
/// placeholder and `prob` the sigmoid output.
pub fn build_detector(arch: &DetectorArch, seed: u64) -> Result<Graph, PayloadError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let mut x = g.add(Node::placeholder(INPUT_NAME, &arch.input_shape()))?;
    let mut cin = 3;
    let mut pooled = Vec::new();
    for (i, s) in arch.stages.iter().enumerate() {
        let w = he_normal(&mut rng, vec![s.kernel, s.kernel, cin, s.filters], s.kernel * s.kernel * cin);
        let b = Tensor::zeros(vec![s.filters]);
        x = add_conv_relu(&mut g, &format!("conv{i}"), x, w, b, s.stride, Padding::Same)?;
        if arch.taps.contains(&i) {
            let gmp = g.add(Node::new(format!("gmp{i}"), Op::GlobalMaxPool).with_inputs(&[x]))?;
            let flat = g.add(
                Node::new(format!("flat{i}"), Op::Reshape)
                    .with_inputs(&[gmp])
                    .with_attr(ATTR_SHAPE, &[s.filters][..]),
            )?;
            pooled.push(flat);
        }
        cin = s.filters;
    }
    let features = arch.pooled_features();
    let concat = g.add(Node::new("features", Op::Concat).with_inputs(&pooled))?;
    let w = g.add(Node::constant("fc_w", he_normal(&mut rng, vec![features, 1], features)))?;
    let b = g.add(Node::constant("fc_b", Tensor::zeros(vec![1])))?;
    let fc = g.add(Node::new(LOGIT_NAME, Op::Dense).with_inputs(&[concat, w, b]))?;
    g.add(Node::new(OUTPUT_NAME, Op::Sigmoid).with_inputs(&[fc]))?;
    g.outputs.push(OUTPUT_NAME.to_string());
    Ok(g)
}
