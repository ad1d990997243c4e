//! Learning problems: class banks, the synthetic modal-mixture family and the
//! one-vs-all episode samplers.

mod modal;
mod sampling;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::numerics::Array;

pub use modal::{generate_modal_bank, ModalBanks, ModalMixtureSpec};
pub use sampling::{
    sample_fiveway, sample_problem, sample_problem_routed, EpisodeStream, FiveWayProblem, FixedProblems,
    ProblemDistribution, ProblemStream,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    /// Logit index: 0 is "no", 1 is "yes".
    pub fn index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Array,
    pub label: Label,
    pub class_id: u32,
}

static MODE_HINT_READS: AtomicUsize = AtomicUsize::new(0);

/// Total number of [`Problem::mode_hint`] reads in this process.
///
/// Training and evaluation code must never look at the ground-truth mode;
/// tests compare this counter before and after running them.
pub fn mode_hint_reads() -> usize {
    MODE_HINT_READS.load(Ordering::SeqCst)
}

/// One one-vs-all episode: a support set with a single positive example and
/// a query set.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub train_set: Vec<Example>,
    pub test_set: Vec<Example>,
    pub positive_class: u32,
    /// Negative classes the support negatives were drawn from.
    pub train_negative_classes: Vec<u32>,
    /// Negative classes the query negatives were drawn from.
    pub test_negative_classes: Vec<u32>,
    mode_hint: Option<u32>,
}

impl Problem {
    pub fn new(
        train_set: Vec<Example>,
        test_set: Vec<Example>,
        positive_class: u32,
        mode_hint: Option<u32>,
    ) -> Self {
        Self {
            train_set,
            test_set,
            positive_class,
            train_negative_classes: Vec::new(),
            test_negative_classes: Vec::new(),
            mode_hint,
        }
    }

    /// Ground-truth synthetic mode, for diagnostics only. Every call is
    /// counted (see [`mode_hint_reads`]).
    pub fn mode_hint(&self) -> Option<u32> {
        MODE_HINT_READS.fetch_add(1, Ordering::SeqCst);
        self.mode_hint
    }

    /// The single positive support example.
    pub fn positive_example(&self) -> Result<&Example> {
        positive_of(&self.train_set)
    }
}

/// The unique positive example of a support set.
pub fn positive_of(train_set: &[Example]) -> Result<&Example> {
    let mut it = train_set.iter().filter(|e| e.label.is_positive());
    match (it.next(), it.next()) {
        (Some(p), None) => Ok(p),
        (None, _) => bail!(Invalid, "support set has no positive example"),
        (Some(_), Some(_)) => bail!(Invalid, "support set has more than one positive example"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    MetaTrain,
    MetaTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassData {
    pub class_id: u32,
    pub examples: Vec<Array>,
}

/// Feature vectors grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBank {
    feature_dim: usize,
    classes: Vec<ClassData>,
    split: SplitTag,
    index: BTreeMap<u32, usize>,
    modes: Option<BTreeMap<u32, u32>>,
}

impl ClassBank {
    pub fn new(feature_dim: usize, classes: Vec<ClassData>, split: SplitTag) -> Result<Self> {
        if feature_dim == 0 {
            bail!(Invalid, "feature dimension must be positive");
        }
        let mut index = BTreeMap::new();
        for (i, c) in classes.iter().enumerate() {
            if index.insert(c.class_id, i).is_some() {
                bail!(Invalid, "duplicate class id {}", c.class_id);
            }
            if c.examples.is_empty() {
                bail!(Invalid, "class {} has no examples", c.class_id);
            }
            if let Some(bad) = c.examples.iter().find(|e| e.shape() != [feature_dim]) {
                bail!(Invalid, "class {} has a feature vector of shape {:?}, expected [{}]", c.class_id, bad.shape(), feature_dim);
            }
        }
        Ok(Self { feature_dim, classes, split, index, modes: None })
    }

    /// Attaches ground-truth modes; sampled problems then carry a mode hint.
    pub fn with_modes(mut self, modes: BTreeMap<u32, u32>) -> Self {
        self.modes = Some(modes);
        self
    }

    pub fn modes(&self) -> Option<&BTreeMap<u32, u32>> {
        self.modes.as_ref()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn classes(&self) -> &[ClassData] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.class_id).collect()
    }

    pub fn class(&self, class_id: u32) -> Option<&ClassData> {
        self.index.get(&class_id).map(|&i| &self.classes[i])
    }

    pub(crate) fn class_index(&self, class_id: u32) -> Option<usize> {
        self.index.get(&class_id).copied()
    }

    pub(crate) fn mode_of(&self, class_id: u32) -> Option<u32> {
        self.modes.as_ref().and_then(|m| m.get(&class_id).copied())
    }

    /// Splits classes into two banks: those in `test_ids` and the rest.
    pub fn split_by(&self, test_ids: &[u32]) -> Result<(ClassBank, ClassBank)> {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for c in &self.classes {
            if test_ids.contains(&c.class_id) {
                test.push(c.clone());
            } else {
                train.push(c.clone());
            }
        }
        let mut a = ClassBank::new(self.feature_dim, train, SplitTag::MetaTrain)?;
        let mut b = ClassBank::new(self.feature_dim, test, SplitTag::MetaTest)?;
        a.modes = self.modes.clone();
        b.modes = self.modes.clone();
        Ok((a, b))
    }
}

/// Episode sizes. Defaults give 1 + 50 support and 50 + 50 query examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub n_neg_train: usize,
    pub n_pos_test: usize,
    pub n_neg_test: usize,
    pub n_neg_classes: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { n_neg_train: 50, n_pos_test: 50, n_neg_test: 50, n_neg_classes: 50 }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_neg_train == 0 || self.n_pos_test == 0 || self.n_neg_test == 0 || self.n_neg_classes == 0 {
            bail!(Config, "episode sizes must all be positive: {:?}", self);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn bank_validation() {
        let ok = ClassData { class_id: 1, examples: vec![Array::vector(vec![0.0, 1.0])] };
        let empty = ClassData { class_id: 2, examples: vec![] };
        let wrong = ClassData { class_id: 3, examples: vec![Array::vector(vec![0.0])] };
        assert!(ClassBank::new(2, vec![ok.clone()], SplitTag::MetaTrain).is_ok());
        assert!(ClassBank::new(2, vec![ok.clone(), empty], SplitTag::MetaTrain).is_err());
        assert!(ClassBank::new(2, vec![ok.clone(), wrong], SplitTag::MetaTrain).is_err());
        assert!(ClassBank::new(2, vec![ok.clone(), ok], SplitTag::MetaTrain).is_err());
    }

    #[test]
    fn positive_lookup() {
        let ex = |label| Example { features: Array::vector(vec![1.0]), label, class_id: 0 };
        assert!(positive_of(&[ex(Label::Negative)]).is_err());
        assert!(positive_of(&[ex(Label::Positive), ex(Label::Positive)]).is_err());
        assert!(positive_of(&[ex(Label::Negative), ex(Label::Positive)]).is_ok());
    }
}
