use std::collections::HashMap;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Declares one learned tensor: its stable name, shape, and the fans used
/// for Xavier initialization (`None` for biases, which start at zero).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fans: Option<(usize, usize)>,
}

impl ParamSpec {
    pub fn weight(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Self {
        ParamSpec {
            name: name.into(),
            shape,
            fans: Some((fan_in, fan_out)),
        }
    }

    pub fn bias(name: impl Into<String>, len: usize) -> Self {
        ParamSpec {
            name: name.into(),
            shape: vec![len],
            fans: None,
        }
    }
}

/// Ordered, named collection of parameter tensors.
///
/// Order is the declaration order of the model's [`ParamSpec`]s and is what
/// checkpoints, optimizer moments and gradient vectors are aligned to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Materializes specs in order with the given initializer.
    pub fn from_specs(specs: &[ParamSpec], mut init: impl FnMut(&ParamSpec) -> Tensor) -> Result<Self> {
        let mut set = ParamSet::new();
        for spec in specs {
            let t = init(spec);
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::shape(
                    "param init",
                    format!("`{}`: expected {:?}, got {:?}", spec.name, spec.shape, t.shape()),
                ));
            }
            set.insert(spec.name.clone(), t)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same names and shapes, all zeros (gradient / moment buffers).
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            index: self.index.clone(),
        }
    }

    /// Registers every tensor as a differentiable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| graph.param(t.clone())).collect();
        Bound { set: self, vars }
    }

    /// Same layout check used before loading or merging parameter sets.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }
}

/// Parameters registered on a particular graph.
pub struct Bound<'p> {
    set: &'p ParamSet,
    vars: Vec<Var>,
}

impl Bound<'_> {
    /// Graph handle of a named parameter.
    ///
    /// Panics on an unknown name: layer code and the parameter declaration
    /// are generated from the same specs, so a miss is a programming error.
    pub fn get(&self, name: &str) -> Var {
        match self.set.position(name) {
            Some(i) => self.vars[i],
            None => panic!("parameter `{name}` is not declared"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Collects gradients after `backward`, zero-filled where a parameter
    /// did not take part in the loss.
    pub fn grads(&self, graph: &Graph) -> ParamSet {
        let mut out = self.set.zeros_like();
        for (slot, &v) in out.tensors.iter_mut().zip(&self.vars) {
            if let Some(g) = graph.grad(v) {
                *slot = g;
            }
        }
        out
    }
}
