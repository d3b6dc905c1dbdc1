//! Multi-expert classifier: a shared trunk, one feature layer and linear
//! classifier per expert, plus projection and prediction heads used by the
//! consistency term.

use ndarray::{Array2, Array3, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvGeometry, Graph, Var};
use crate::data::SampleShape;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    /// Fully connected ReLU trunk with the given hidden widths.
    Mlp { hidden: Vec<usize> },
    /// Stem conv, strided conv, one residual block, global average pool.
    /// The trunk output has `2 * channels` features.
    Cnn { channels: usize },
}

/// Which features feed the contrastive and consistency terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// The global (last) expert.
    #[default]
    Global,
    /// Mean over all experts.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: SampleShape,
    pub num_classes: usize,
    pub num_experts: usize,
    pub feature_dim: usize,
    pub encoder: EncoderSpec,
    #[serde(default = "default_proj_dim")]
    pub proj_dim: usize,
    #[serde(default = "default_pred_hidden")]
    pub pred_hidden: usize,
}

fn default_proj_dim() -> usize {
    128
}

fn default_pred_hidden() -> usize {
    64
}

/// Named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
}

impl Parameters {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
    geom: ConvGeometry,
}

#[derive(Debug, Clone)]
enum Trunk {
    Mlp(Vec<Linear>),
    Cnn {
        stem: Conv,
        down: Conv,
        res_a: Conv,
        res_b: Conv,
        channels: usize,
    },
}

#[derive(Debug, Clone)]
struct Layout {
    trunk: Trunk,
    experts: Vec<Linear>,
    classifiers: Vec<Linear>,
    proj: [Linear; 2],
    pred: [Linear; 2],
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    /// Standard deviation of the initial weights; biases start at zero.
    init_std: Vec<f64>,
}

struct LayoutBuilder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    init_std: Vec<f64>,
}

impl LayoutBuilder {
    fn tensor(&mut self, name: String, shape: (usize, usize), std: f64) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.init_std.push(std);
        self.names.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Linear {
        let std = (gain / fan_in as f64).sqrt();
        Linear {
            w: self.tensor(format!("{name}.w"), (fan_in, fan_out), std),
            b: self.tensor(format!("{name}.b"), (1, fan_out), 0.0),
        }
    }

    fn conv(&mut self, name: &str, geom: ConvGeometry) -> Conv {
        let fan_in = geom.in_channels * geom.kernel * geom.kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        Conv {
            w: self.tensor(format!("{name}.w"), (geom.out_channels, fan_in), std),
            b: self.tensor(format!("{name}.b"), (1, geom.out_channels), 0.0),
            geom,
        }
    }
}

impl Layout {
    fn build(spec: &ModelSpec) -> Result<Self> {
        if spec.num_experts < 1 || spec.num_classes < 2 || spec.feature_dim < 1 {
            return Err(Error::invalid(
                "model needs >= 1 expert, >= 2 classes and a positive feature dim",
            ));
        }
        let mut b = LayoutBuilder {
            names: Vec::new(),
            shapes: Vec::new(),
            init_std: Vec::new(),
        };
        let (trunk, trunk_out) = match &spec.encoder {
            EncoderSpec::Mlp { hidden } => {
                let mut layers = Vec::new();
                let mut width = spec.input.len();
                for (i, &h) in hidden.iter().enumerate() {
                    layers.push(b.linear(&format!("trunk{i}"), width, h, 2.0));
                    width = h;
                }
                (Trunk::Mlp(layers), width)
            }
            EncoderSpec::Cnn { channels } => {
                let s = spec.input;
                if !s.is_spatial() {
                    return Err(Error::invalid("cnn encoder needs spatial inputs"));
                }
                let ch = *channels;
                let stem = ConvGeometry {
                    in_channels: s.channels,
                    out_channels: ch,
                    height: s.height,
                    width: s.width,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                };
                let down = ConvGeometry {
                    in_channels: ch,
                    out_channels: 2 * ch,
                    stride: 2,
                    ..stem
                };
                let res = ConvGeometry {
                    in_channels: 2 * ch,
                    out_channels: 2 * ch,
                    height: down.out_height(),
                    width: down.out_width(),
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                };
                let trunk = Trunk::Cnn {
                    stem: b.conv("stem", stem),
                    down: b.conv("down", down),
                    res_a: b.conv("res_a", res),
                    res_b: b.conv("res_b", res),
                    channels: 2 * ch,
                };
                (trunk, 2 * ch)
            }
        };
        let d = spec.feature_dim;
        let experts = (0..spec.num_experts)
            .map(|k| b.linear(&format!("expert{k}.feat"), trunk_out, d, 2.0))
            .collect();
        let classifiers = (0..spec.num_experts)
            .map(|k| b.linear(&format!("expert{k}.cls"), d, spec.num_classes, 1.0))
            .collect();
        let proj = [
            b.linear("proj0", d, spec.proj_dim, 2.0),
            b.linear("proj1", spec.proj_dim, spec.proj_dim, 1.0),
        ];
        let pred = [
            b.linear("pred0", spec.proj_dim, spec.pred_hidden, 2.0),
            b.linear("pred1", spec.pred_hidden, spec.proj_dim, 1.0),
        ];
        Ok(Self {
            trunk,
            experts,
            classifiers,
            proj,
            pred,
            names: b.names,
            shapes: b.shapes,
            init_std: b.init_std,
        })
    }
}

/// Per-expert outputs on the tape.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `B x d` per expert.
    pub features: Vec<Var>,
    /// `B x C` per expert.
    pub logits: Vec<Var>,
    /// Mean of the expert logits.
    pub ensemble: Var,
}

/// Plain-value snapshot of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertEnsembleOutput {
    /// `(B, K, d)`
    pub features: Array3<f64>,
    /// `(B, K, C)`
    pub logits: Array3<f64>,
    /// `(B, C)`
    pub ensemble_logits: Array2<f64>,
    /// Projection `h` of the contrastive features, when requested.
    pub proj: Option<Array2<f64>>,
    /// Prediction `u = pred(h)`, when requested.
    pub pred: Option<Array2<f64>>,
}

fn stack(g: &Graph, vars: &[Var]) -> Array3<f64> {
    let (b, n) = g.shape(vars[0]);
    let mut out = Array3::zeros((b, vars.len(), n));
    for (k, &v) in vars.iter().enumerate() {
        out.index_axis_mut(Axis(1), k).assign(g.value(v));
    }
    out
}

impl ExpertEnsembleOutput {
    pub fn from_pass(g: &Graph, pass: &ForwardPass) -> Self {
        Self {
            features: stack(g, &pass.features),
            logits: stack(g, &pass.logits),
            ensemble_logits: g.value(pass.ensemble).clone(),
            proj: None,
            pred: None,
        }
    }
}

/// A multi-expert network with its parameters.
#[derive(Debug, Clone)]
pub struct Backbone {
    spec: ModelSpec,
    params: Parameters,
    layout: Layout,
}

/// Serializable form of a [`Backbone`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneState {
    pub spec: ModelSpec,
    pub params: Parameters,
}

impl Backbone {
    /// Freshly initialized network; weights are He-normal, biases zero.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let layout = Layout::build(&spec)?;
        let mut r = rng::stream(seed, &[rng::TAG_INIT]);
        let tensors = layout
            .shapes
            .iter()
            .zip(&layout.init_std)
            .map(|(&shape, &std)| {
                Array2::from_shape_fn(shape, |_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    z * std
                })
            })
            .collect();
        let params = Parameters {
            names: layout.names.clone(),
            tensors,
        };
        Ok(Self {
            spec,
            params,
            layout,
        })
    }

    /// Rebuilds a network from stored parameters without validating them;
    /// [`Backbone::forward`] rejects parameters that do not fit the spec.
    pub fn from_state(state: BackboneState) -> Result<Self> {
        let layout = Layout::build(&state.spec)?;
        Ok(Self {
            spec: state.spec,
            params: state.params,
            layout,
        })
    }

    pub fn state(&self) -> BackboneState {
        BackboneState {
            spec: self.spec.clone(),
            params: self.params.clone(),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn num_experts(&self) -> usize {
        self.spec.num_experts
    }

    /// Indices of the tensors the contrastive/consistency heads own.
    pub fn head_param_indices(&self) -> Vec<usize> {
        let l = &self.layout;
        l.proj
            .iter()
            .chain(&l.pred)
            .flat_map(|lin| [lin.w, lin.b])
            .collect()
    }

    /// Indices of the tensors of the prediction head only.
    pub fn prediction_param_indices(&self) -> Vec<usize> {
        self.layout.pred.iter().flat_map(|lin| [lin.w, lin.b]).collect()
    }

    fn check_initialized(&self) -> Result<()> {
        let ok = self.params.len() == self.layout.shapes.len()
            && self
                .params
                .tensors
                .iter()
                .zip(&self.layout.shapes)
                .all(|(t, &s)| t.dim() == s);
        if ok {
            Ok(())
        } else {
            Err(Error::Uninitialized(format!(
                "expected {} parameter tensors matching the spec, found {}",
                self.layout.shapes.len(),
                self.params.len()
            )))
        }
    }

    /// Puts every parameter on the tape.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Vec<Var>> {
        self.check_initialized()?;
        Ok(self
            .params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect())
    }

    fn linear(g: &mut Graph, p: &[Var], lin: Linear, x: Var) -> Var {
        let y = g.matmul(x, p[lin.w]);
        g.add_row(y, p[lin.b])
    }

    fn conv(g: &mut Graph, p: &[Var], c: Conv, x: Var) -> Var {
        g.conv2d(x, p[c.w], p[c.b], c.geom)
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], input: Var) -> Result<ForwardPass> {
        self.check_initialized()?;
        if p.len() != self.params.len() {
            return Err(Error::Uninitialized("parameters are not bound".into()));
        }
        if g.shape(input).1 != self.spec.input.len() {
            return Err(Error::shape(format!(
                "input rows have {} values, model expects {}",
                g.shape(input).1,
                self.spec.input.len()
            )));
        }
        let l = &self.layout;
        let trunk = match &l.trunk {
            Trunk::Mlp(layers) => {
                let mut h = input;
                for &lin in layers {
                    let y = Self::linear(g, p, lin, h);
                    h = g.relu(y);
                }
                h
            }
            Trunk::Cnn {
                stem,
                down,
                res_a,
                res_b,
                channels,
            } => {
                let y = Self::conv(g, p, *stem, input);
                let h = g.relu(y);
                let y = Self::conv(g, p, *down, h);
                let h = g.relu(y);
                let a = Self::conv(g, p, *res_a, h);
                let a = g.relu(a);
                let b = Self::conv(g, p, *res_b, a);
                let s = g.add(h, b);
                let h = g.relu(s);
                g.global_avg_pool(h, *channels)
            }
        };
        let mut features = Vec::with_capacity(l.experts.len());
        let mut logits = Vec::with_capacity(l.experts.len());
        for (&feat, &cls) in l.experts.iter().zip(&l.classifiers) {
            let y = Self::linear(g, p, feat, trunk);
            let z = g.relu(y);
            logits.push(Self::linear(g, p, cls, z));
            features.push(z);
        }
        let ensemble = mean_of(g, &logits);
        Ok(ForwardPass {
            features,
            logits,
            ensemble,
        })
    }

    /// Features feeding the contrastive and consistency terms.
    pub fn contrastive_features(&self, g: &mut Graph, pass: &ForwardPass, source: FeatureSource) -> Var {
        match source {
            FeatureSource::Global => *pass.features.last().expect("at least one expert"),
            FeatureSource::Mean => mean_of(g, &pass.features),
        }
    }

    /// Projection `h` and prediction `u = pred(h)`.
    pub fn project(&self, g: &mut Graph, p: &[Var], features: Var) -> (Var, Var) {
        let l = &self.layout;
        let y = Self::linear(g, p, l.proj[0], features);
        let y = g.relu(y);
        let h = Self::linear(g, p, l.proj[1], y);
        let y = Self::linear(g, p, l.pred[0], h);
        let y = g.relu(y);
        let u = Self::linear(g, p, l.pred[1], y);
        (h, u)
    }

    /// Evaluation-mode forward over plain inputs.
    pub fn infer(&self, inputs: &Array2<f64>, heads: Option<FeatureSource>) -> Result<ExpertEnsembleOutput> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false)?;
        let x = g.constant(inputs.clone());
        let pass = self.forward(&mut g, &p, x)?;
        let mut out = ExpertEnsembleOutput::from_pass(&g, &pass);
        if let Some(source) = heads {
            let z = self.contrastive_features(&mut g, &pass, source);
            let (h, u) = self.project(&mut g, &p, z);
            out.proj = Some(g.value(h).clone());
            out.pred = Some(g.value(u).clone());
        }
        Ok(out)
    }

    /// Ensemble logits only, evaluated in chunks to bound tape size.
    pub fn ensemble_logits(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        const CHUNK: usize = 512;
        let mut out = Array2::zeros((inputs.nrows(), self.spec.num_classes));
        let mut start = 0;
        while start < inputs.nrows() {
            let end = (start + CHUNK).min(inputs.nrows());
            let chunk = inputs.slice(ndarray::s![start..end, ..]).to_owned();
            let o = self.infer(&chunk, None)?;
            out.slice_mut(ndarray::s![start..end, ..]).assign(&o.ensemble_logits);
            start = end;
        }
        Ok(out)
    }
}

fn mean_of(g: &mut Graph, vars: &[Var]) -> Var {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v);
    }
    g.scale(acc, 1.0 / vars.len() as f64)
}
