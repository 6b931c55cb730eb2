//! Class-similarity rankings, temperature schedules, and batch partitions.
//!
//! A ranking assigns, for each anchor class, an ordered chain of positive
//! class-sets P_2 ... P_r in decreasing similarity; rank 1 is implicitly the
//! anchor's own class. Everything not ranked is negative.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ranking file schema:
/// `{"classes": [...], "r": int, "ranks": {class: [[...], ...]}}`
/// with exactly r-1 inner lists per class (lists are order-significant).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingSpec {
    classes: Vec<String>,
    r: usize,
    #[serde(default)]
    ranks: BTreeMap<String, Vec<Vec<String>>>,
}

impl RankingSpec {
    pub fn new(
        classes: Vec<String>,
        r: usize,
        ranks: BTreeMap<String, Vec<Vec<String>>>,
    ) -> Result<Self> {
        let spec = RankingSpec { classes, r, ranks };
        spec.validate()?;
        Ok(spec)
    }

    /// Depth-1 spec over the given classes: plain supervised contrastive.
    pub fn depth_one(classes: Vec<String>) -> Result<Self> {
        RankingSpec::new(classes, 1, BTreeMap::new())
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn depth(&self) -> usize {
        self.r
    }

    /// Rank lists for one class (r-1 sets, rank 2 first). Empty for r=1.
    pub fn ranks_of(&self, class: &str) -> &[Vec<String>] {
        self.ranks.get(class).map_or(&[], |v| v.as_slice())
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    fn validate(&self) -> Result<()> {
        if self.r < 1 {
            return Err(Error::Validation("ranking depth r must be >= 1".into()));
        }
        let known: HashSet<&str> = self.classes.iter().map(|s| s.as_str()).collect();
        if known.len() != self.classes.len() {
            return Err(Error::Validation("duplicate class name in classes".into()));
        }
        for anchor in self.ranks.keys() {
            if !known.contains(anchor.as_str()) {
                return Err(Error::Validation(format!(
                    "ranks entry for unknown class '{anchor}'"
                )));
            }
        }
        for class in &self.classes {
            let lists = self.ranks_of(class);
            if self.r == 1 {
                if !lists.is_empty() {
                    return Err(Error::Validation(format!(
                        "class '{class}' has rank lists but r=1"
                    )));
                }
                continue;
            }
            if lists.len() != self.r - 1 {
                return Err(Error::Validation(format!(
                    "ragged depth: class '{class}' has {} rank lists, expected {}",
                    lists.len(),
                    self.r - 1
                )));
            }
            let mut seen: HashSet<&str> = HashSet::new();
            for list in lists {
                for name in list {
                    if name == class {
                        return Err(Error::Validation(format!(
                            "class '{class}' references itself in its ranking"
                        )));
                    }
                    if !known.contains(name.as_str()) {
                        return Err(Error::Validation(format!(
                            "unknown class '{name}' in ranking of '{class}'"
                        )));
                    }
                    if !seen.insert(name.as_str()) {
                        return Err(Error::Validation(format!(
                            "class '{name}' appears in two ranks of '{class}'"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// (anchor class, rank index starting at 2) pairs whose rank set is empty.
    /// Sparse rankings are legal; callers may want to warn about them since
    /// the corresponding loss terms are skipped.
    pub fn empty_rank_entries(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for class in &self.classes {
            for (i, list) in self.ranks_of(class).iter().enumerate() {
                if list.is_empty() {
                    out.push((class.clone(), i + 2));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ranking spec serializes")
    }
}

/// Parse and validate a ranking document.
pub fn parse_ranking(text: &str) -> Result<RankingSpec> {
    let spec: RankingSpec = serde_json::from_str(text)?;
    spec.validate()?;
    Ok(spec)
}

/// Per-rank softmax temperatures, strictly increasing with rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    taus: Vec<f64>,
}

impl TemperatureSchedule {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::Validation("temperature schedule is empty".into()));
        }
        if taus.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Validation("temperatures must be positive".into()));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation(
                "temperatures must be strictly increasing".into(),
            ));
        }
        Ok(TemperatureSchedule { taus })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

/// tau_i = tau_min + (i-1)(tau_max - tau_min)/(r-1); [tau_min] for r = 1.
pub fn linear_temperature_schedule(
    tau_min: f64,
    tau_max: f64,
    r: usize,
) -> Result<TemperatureSchedule> {
    if !(tau_min > 0.0) || tau_max < tau_min {
        return Err(Error::Validation(format!(
            "bad temperature bounds [{tau_min}, {tau_max}]"
        )));
    }
    if r < 1 {
        return Err(Error::Validation("r must be >= 1".into()));
    }
    if r == 1 {
        return TemperatureSchedule::new(vec![tau_min]);
    }
    if tau_min == tau_max {
        return Err(Error::Validation(
            "r > 1 requires tau_min < tau_max".into(),
        ));
    }
    let taus = (0..r)
        .map(|i| tau_min + i as f64 * (tau_max - tau_min) / (r - 1) as f64)
        .collect();
    TemperatureSchedule::new(taus)
}

/// Positive rank sets and negatives for one anchor within a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorPartition {
    /// P_1 ... P_r as batch indices; anchor excluded.
    pub positives: Vec<Vec<usize>>,
    /// N: everything not in any rank.
    pub negatives: Vec<usize>,
}

/// Split a labeled batch into P_1 ... P_r and N for one anchor.
pub fn partition_batch(
    labels: &[String],
    anchor: usize,
    spec: &RankingSpec,
) -> Result<AnchorPartition> {
    if anchor >= labels.len() {
        return Err(Error::Validation(format!(
            "anchor index {anchor} out of range for batch of {}",
            labels.len()
        )));
    }
    let anchor_label = &labels[anchor];
    if spec.class_index(anchor_label).is_none() {
        return Err(Error::Validation(format!(
            "unknown label '{anchor_label}' at anchor"
        )));
    }
    // class -> rank (1-based); absent = negative
    let mut rank_of: BTreeMap<&str, usize> = BTreeMap::new();
    rank_of.insert(anchor_label.as_str(), 1);
    for (i, list) in spec.ranks_of(anchor_label).iter().enumerate() {
        for name in list {
            rank_of.insert(name.as_str(), i + 2);
        }
    }
    let mut positives = vec![Vec::new(); spec.depth()];
    let mut negatives = Vec::new();
    for (idx, label) in labels.iter().enumerate() {
        if idx == anchor {
            continue;
        }
        if spec.class_index(label).is_none() {
            return Err(Error::Validation(format!("unknown label '{label}' in batch")));
        }
        match rank_of.get(label.as_str()) {
            Some(&rank) => positives[rank - 1].push(idx),
            None => negatives.push(idx),
        }
    }
    Ok(AnchorPartition { positives, negatives })
}
