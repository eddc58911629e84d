use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamLayout`] / [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Zero-mean Gaussian with standard deviation `1/sqrt(fan_in)`.
    FanIn(usize),
    Normal(f64),
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
    /// Buffers (e.g. running statistics) are stored but never optimized.
    pub trainable: bool,
}

/// Shapes and initializers of every parameter, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    index: HashMap<String, usize>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter. Paths must be unique.
    pub fn add(&mut self, path: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        self.push(path.into(), shape, init, true)
    }

    pub fn add_buffer(&mut self, path: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        self.push(path.into(), shape, init, false)
    }

    fn push(&mut self, path: String, shape: &[usize], init: Init, trainable: bool) -> ParamId {
        assert!(
            !self.index.contains_key(&path),
            "duplicate parameter path {path}"
        );
        let id = self.specs.len();
        self.index.insert(path.clone(), id);
        self.specs.push(ParamSpec {
            path,
            shape: shape.to_vec(),
            init,
            trainable,
        });
        ParamId(id)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn id(&self, path: &str) -> Option<ParamId> {
        self.index.get(path).map(|&i| ParamId(i))
    }

    /// Number of trainable scalars, optionally restricted to a path prefix.
    pub fn count(&self, prefix: Option<&str>) -> usize {
        self.specs
            .iter()
            .filter(|s| s.trainable && prefix.is_none_or(|p| s.path.starts_with(p)))
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }
}

#[derive(Clone)]
pub struct Param {
    pub path: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

/// Concrete parameter values and gradient accumulators.
#[derive(Clone)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    /// Materializes a layout; initial values are drawn in registration order
    /// from a ChaCha8 stream seeded with `seed`.
    pub fn from_layout(layout: &ParamLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout
            .specs
            .iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data: Vec<f64> = match spec.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Const(c) => vec![c; n],
                    Init::FanIn(fan) => {
                        let d = Normal::new(0.0, 1.0 / (fan.max(1) as f64).sqrt()).unwrap();
                        (0..n).map(|_| d.sample(&mut rng)).collect()
                    }
                    Init::Normal(std) => {
                        let d = Normal::new(0.0, std).unwrap();
                        (0..n).map(|_| d.sample(&mut rng)).collect()
                    }
                };
                Param {
                    path: spec.path.clone(),
                    value: Tensor::new(spec.shape.clone(), data).expect("layout shapes are valid"),
                    grad: vec![0.0; n],
                    trainable: spec.trainable,
                }
            })
            .collect();
        ParamStore {
            params,
            index: layout.index.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, path: &str) -> Option<ParamId> {
        self.index.get(path).map(|&i| ParamId(i))
    }

    pub fn by_path(&self, path: &str) -> Option<&Param> {
        self.id(path).map(|id| self.get(id))
    }

    pub fn by_path_mut(&mut self, path: &str) -> Option<&mut Param> {
        self.id(path).map(|id| &mut self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Overwrites a parameter's values, checking the element count.
    pub fn set(&mut self, path: &str, data: &[f64]) -> Result<()> {
        let p = self
            .by_path_mut(path)
            .ok_or_else(|| Error::usage(format!("unknown parameter {path}")))?;
        if p.value.numel() != data.len() {
            return Err(Error::Dimension {
                op: "set_param",
                lhs: p.value.shape().to_vec(),
                rhs: vec![data.len()],
            });
        }
        p.value.data_mut().copy_from_slice(data);
        Ok(())
    }
}

/// One forward/backward pass: a fresh [`Graph`] bound read-only to a
/// parameter store. Dereferences to the graph so ops read naturally.
pub struct Session<'p> {
    graph: Graph,
    store: &'p ParamStore,
    leaves: HashMap<ParamId, Var>,
    training: bool,
    buffer_updates: Vec<(ParamId, Vec<f64>)>,
}

impl<'p> Session<'p> {
    pub fn new(store: &'p ParamStore, training: bool) -> Self {
        Session {
            graph: Graph::new(),
            store,
            leaves: HashMap::new(),
            training,
            buffer_updates: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    /// The graph leaf for a parameter; created on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.leaves.get(&id) {
            return v;
        }
        let param = self.store.get(id);
        let v = self.graph.leaf(param.value.clone(), param.trainable);
        self.leaves.insert(id, v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    /// Queues a new value for a buffer; see [`ParamStore::apply_buffer_updates`].
    pub fn update_buffer(&mut self, id: ParamId, value: Vec<f64>) {
        self.buffer_updates.push((id, value));
    }

    pub fn buffer_updates(&self) -> &[(ParamId, Vec<f64>)] {
        &self.buffer_updates
    }

    pub fn into_buffer_updates(self) -> Vec<(ParamId, Vec<f64>)> {
        self.buffer_updates
    }

    /// Runs the reverse sweep and collects gradients of every parameter
    /// used in this pass.
    pub fn param_grads(&self, loss: Var) -> Result<ParamGrads> {
        let grads = self.graph.backward(loss)?;
        Ok(self.collect(&grads))
    }

    pub fn collect(&self, grads: &Gradients) -> ParamGrads {
        let mut out: Vec<(ParamId, Vec<f64>)> = self
            .leaves
            .iter()
            .filter_map(|(&id, &v)| grads.get(v).map(|g| (id, g.to_vec())))
            .collect();
        out.sort_by_key(|(id, _)| id.0);
        ParamGrads(out)
    }

    pub fn leaf_of(&self, id: ParamId) -> Option<Var> {
        self.leaves.get(&id).copied()
    }
}

/// Per-parameter gradients from one pass, detached from the graph.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads(pub Vec<(ParamId, Vec<f64>)>);

impl ParamStore {
    /// Adds gradients into the accumulators. Calling this twice with the
    /// same gradients doubles every accumulator exactly.
    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (id, g) in &grads.0 {
            for (acc, gv) in self.params[id.0].grad.iter_mut().zip(g) {
                *acc += gv;
            }
        }
    }

    pub fn apply_buffer_updates(&mut self, updates: Vec<(ParamId, Vec<f64>)>) {
        for (id, v) in updates {
            self.params[id.0].value.data_mut().copy_from_slice(&v);
        }
    }
}

impl Deref for Session<'_> {
    type Target = Graph;
    fn deref(&self) -> &Graph {
        &self.graph
    }
}

impl DerefMut for Session<'_> {
    fn deref_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }
}

