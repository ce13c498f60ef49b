use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::directive::{format_positions, PlacementMode, PositionDirective};
use super::layers::LayerSpec;
use crate::error::{Error, Result};
use crate::module::{BufferMut, Module, Param};
use crate::ops::Mode;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Mv1,
    Mv2,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Mv1 => "mv1",
            Arch::Mv2 => "mv2",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphMeta {
    pub arch: Arch,
    pub alpha: f64,
    pub num_classes: usize,
    pub seed: u64,
    /// Group count of the applied ULSAM blocks, if any.
    pub ulsam_groups: Option<usize>,
    pub directives: Vec<PositionDirective>,
}

impl GraphMeta {
    /// Applied directives in canonical form, e.g. `"8:1, 9:1, 11"`.
    pub fn positions(&self) -> String {
        format_positions(&self.directives)
    }
}

struct Node<T: Element> {
    label: String,
    spec: LayerSpec,
    module: Box<dyn Module<T>>,
    /// The original layer a substitution displaced.
    replaced: Option<Box<Node<T>>>,
}

/// An ordered chain of layers with layer labels kept from the reference
/// numbering ("1".."14" for MobileNet-V1, "1".."20" for MobileNet-V2) and
/// ULSAM insertions labeled by their directive ("8:1").
pub struct ModelGraph<T: Element = f32> {
    meta: GraphMeta,
    nodes: Vec<Node<T>>,
}

impl<T: Element> fmt::Debug for ModelGraph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelGraph")
            .field("meta", &self.meta)
            .field("layers", &self.layers())
            .finish()
    }
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Each node draws its weights from a generator keyed by the run seed and
/// its label, so adding or removing a node leaves the others untouched.
fn node_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label))
}

fn make_node<T: Element>(seed: u64, label: String, spec: LayerSpec) -> Result<Node<T>> {
    let module = spec.instantiate(&mut node_rng(seed, &label))?;
    Ok(Node {
        label,
        spec,
        module,
        replaced: None,
    })
}

impl<T: Element> ModelGraph<T> {
    pub fn from_layers(meta: GraphMeta, layers: Vec<(String, LayerSpec)>) -> Result<Self> {
        let nodes = layers
            .into_iter()
            .map(|(label, spec)| make_node(meta.seed, label, spec))
            .collect::<Result<Vec<_>>>()?;
        let graph = ModelGraph { meta, nodes };
        graph.validate()?;
        Ok(graph)
    }

    pub fn meta(&self) -> &GraphMeta {
        &self.meta
    }

    pub fn num_classes(&self) -> usize {
        self.meta.num_classes
    }

    pub fn input_channels(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.spec.in_channels())
    }

    /// `(label, spec)` for every node in execution order.
    pub fn layers(&self) -> Vec<(String, LayerSpec)> {
        self.nodes.iter().map(|n| (n.label.clone(), n.spec)).collect()
    }

    pub fn layer(&self, label: &str) -> Option<LayerSpec> {
        self.nodes.iter().find(|n| n.label == label).map(|n| n.spec)
    }

    /// Channel consistency between adjacent layers.
    pub fn validate(&self) -> Result<()> {
        for pair in self.nodes.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.spec.out_channels() != b.spec.in_channels() {
                return Err(Error::config(format!(
                    "layer {} produces {} channels but layer {} expects {}",
                    a.label,
                    a.spec.out_channels(),
                    b.label,
                    b.spec.in_channels()
                )));
            }
        }
        match self.nodes.last() {
            Some(n) if n.spec.out_channels() == self.meta.num_classes => Ok(()),
            Some(n) => Err(Error::config(format!(
                "graph head produces {} outputs for num_classes = {}",
                n.spec.out_channels(),
                self.meta.num_classes
            ))),
            None => Err(Error::config("graph has no layers")),
        }
    }

    fn position(&self, label: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.label == label)
    }

    /// Place ULSAM blocks with `g` groups at the given positions.
    pub fn apply_ulsam(&mut self, directives: &[PositionDirective], g: usize) -> Result<()> {
        let mut sorted = directives.to_vec();
        sorted.sort();
        for (i, d) in sorted.iter().enumerate() {
            if sorted[..i].contains(d) || self.meta.directives.contains(d) {
                return Err(Error::directive(d.to_string(), "position given twice"));
            }
        }
        let previous_groups = self.meta.ulsam_groups;
        let mut applied = Vec::with_capacity(sorted.len());
        for d in sorted {
            if let Err(e) = self.apply_one(d, g) {
                for done in applied.into_iter().rev() {
                    self.remove_ulsam(done)?;
                }
                self.meta.ulsam_groups = previous_groups;
                return Err(e);
            }
            self.meta.directives.push(d);
            self.meta.directives.sort();
            self.meta.ulsam_groups = Some(g);
            applied.push(d);
        }
        self.validate()
    }

    fn apply_one(&mut self, d: PositionDirective, g: usize) -> Result<()> {
        let err = |reason: String| Error::directive(d.to_string(), reason);
        let target = d.layer.to_string();
        let at = self
            .position(&target)
            .ok_or_else(|| err(format!("{} has no layer {}", self.meta.arch, d.layer)))?;
        let spec = self.nodes[at].spec;
        if spec.conv_stages().is_empty() && !matches!(spec, LayerSpec::Ulsam { .. }) {
            return Err(err(format!("layer {} is a {}, not a feature layer", d.layer, spec.kind_name())));
        }
        match d.mode {
            PlacementMode::InsertAfter => {
                let ulsam = LayerSpec::Ulsam {
                    channels: spec.out_channels(),
                    groups: g,
                };
                ulsam.validate().map_err(|e| err(e.to_string()))?;
                let node = make_node(self.meta.seed, d.label(), ulsam)?;
                self.nodes.insert(at + 1, node);
            }
            PlacementMode::Substitute => {
                if matches!(spec, LayerSpec::Ulsam { .. }) {
                    return Err(err(format!("layer {} is already substituted", d.layer)));
                }
                if !spec.preserves_shape() {
                    return Err(err(format!(
                        "layer {} maps {} -> {} channels with stride {}; substitution needs equal channels and stride 1",
                        d.layer,
                        spec.in_channels(),
                        spec.out_channels(),
                        spec.stride()
                    )));
                }
                let ulsam = LayerSpec::Ulsam {
                    channels: spec.in_channels(),
                    groups: g,
                };
                ulsam.validate().map_err(|e| err(e.to_string()))?;
                let node = make_node(self.meta.seed, d.label(), ulsam)?;
                let original = std::mem::replace(&mut self.nodes[at], node);
                self.nodes[at].replaced = Some(Box::new(original));
            }
        }
        Ok(())
    }

    /// Undo one previously applied directive, restoring the original layer
    /// (with its weights) for substitutions.
    pub fn remove_ulsam(&mut self, d: PositionDirective) -> Result<()> {
        let Some(k) = self.meta.directives.iter().position(|x| *x == d) else {
            return Err(Error::directive(d.to_string(), "position is not applied"));
        };
        let at = self
            .position(&d.label())
            .ok_or_else(|| Error::directive(d.to_string(), "ULSAM node is missing"))?;
        match d.mode {
            PlacementMode::InsertAfter => {
                self.nodes.remove(at);
            }
            PlacementMode::Substitute => {
                let original = self.nodes[at]
                    .replaced
                    .take()
                    .ok_or_else(|| Error::directive(d.to_string(), "no displaced layer to restore"))?;
                self.nodes[at] = *original;
            }
        }
        self.meta.directives.remove(k);
        if self.meta.directives.is_empty() {
            self.meta.ulsam_groups = None;
        }
        self.validate()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let s = input.shape();
        if s.channels != self.input_channels() {
            return Err(Error::config(format!(
                "input has {} channels, the network expects {}",
                s.channels,
                self.input_channels()
            )));
        }
        if s.batch == 0 || s.height == 0 || s.width == 0 {
            return Err(Error::config(format!("input {s} is empty")));
        }
        Ok(())
    }

    /// Class logits, shaped `(batch, num_classes, 1, 1)`.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for node in &mut self.nodes {
            x = node.module.forward(&x, mode)?;
        }
        Ok(x)
    }

    /// Inference-mode forward through a shared reference.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for node in &self.nodes {
            x = node.module.infer(&x)?;
        }
        Ok(x)
    }

    /// Back-propagate the logit gradient, accumulating into every parameter's
    /// gradient; returns the gradient with respect to the input batch.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_logits.clone();
        for node in self.nodes.iter_mut().rev() {
            g = node.module.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.module.zero_grad());
    }

    /// Parameters with graph-qualified names such as `"3.pw.weight"`.
    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                n.module
                    .params()
                    .into_iter()
                    .map(move |p| (format!("{}.{}", n.label, p.name), p))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        self.nodes
            .iter_mut()
            .flat_map(|n| {
                let label = n.label.clone();
                n.module
                    .params_mut()
                    .into_iter()
                    .map(move |p| (format!("{label}.{}", p.name), p))
            })
            .collect()
    }

    /// Non-trainable state (batch-norm running statistics), graph-qualified.
    pub fn buffers_mut(&mut self) -> Vec<BufferMut<'_, T>> {
        self.nodes
            .iter_mut()
            .flat_map(|n| {
                let label = n.label.clone();
                n.module.buffers_mut().into_iter().map(move |b| BufferMut {
                    name: format!("{label}.{}", b.name),
                    value: b.value,
                })
            })
            .collect()
    }

    /// Total trainable scalars, batch-norm affine pairs included.
    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(|n| n.module.param_count()).sum()
    }
}

/// Consuming form of [`ModelGraph::apply_ulsam`].
pub fn apply_ulsam<T: Element>(
    mut graph: ModelGraph<T>,
    directives: &[PositionDirective],
    g: usize,
) -> Result<ModelGraph<T>> {
    graph.apply_ulsam(directives, g)?;
    Ok(graph)
}
