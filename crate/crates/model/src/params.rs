use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

/// Parameter groups used for freezing and per-group learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    HandEncoder,
    SceneEncoder,
    Prompt,
    Decoder,
    ManoHead,
    TranslHead,
    SceneHead,
    CameraHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::HandEncoder,
        ParamGroup::SceneEncoder,
        ParamGroup::Prompt,
        ParamGroup::Decoder,
        ParamGroup::ManoHead,
        ParamGroup::TranslHead,
        ParamGroup::SceneHead,
        ParamGroup::CameraHead,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±sqrt(3)·std`.
    Uniform(f64),
}

/// Named, grouped parameters in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    frozen: BTreeSet<ParamGroup>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, group: ParamGroup, shape: (usize, usize), init: Init, rng: &mut ChaCha8Rng) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter {name}");
        let value = match init {
            Init::Zeros => Array2::zeros(shape),
            Init::Ones => Array2::ones(shape),
            Init::Uniform(std) => {
                let a = 3f64.sqrt() * std;
                Array2::from_shape_fn(shape, |_| rng.gen_range(-a..a))
            }
        };
        self.params.push(Param { name: name.to_string(), group, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn group_ids(&self, group: ParamGroup) -> Vec<ParamId> {
        self.ids().filter(|id| self.get(*id).group == group).collect()
    }

    pub fn set_frozen(&mut self, group: ParamGroup, frozen: bool) {
        if frozen {
            self.frozen.insert(group);
        } else {
            self.frozen.remove(&group);
        }
    }

    /// Freezes every group not listed.
    pub fn train_only(&mut self, groups: &[ParamGroup]) {
        for g in ParamGroup::ALL {
            self.set_frozen(g, !groups.contains(&g));
        }
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen.contains(&group)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        !self.frozen.contains(&self.get(id).group)
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies of every value of one group, for bit-exact comparisons.
    pub fn snapshot(&self, group: ParamGroup) -> Vec<Tensor> {
        self.params.iter().filter(|p| p.group == group).map(|p| p.value.clone()).collect()
    }

    pub fn all(&self) -> &[Param] {
        &self.params
    }
}
