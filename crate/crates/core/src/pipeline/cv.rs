//! The ten five-group cross-validation configurations.
//!
//! For every configuration, two groups train the rating regressor, two
//! validate it (and later train the retrieval network) and one is held out
//! for retrieval testing. Configurations 2, 5, 6, 8 and 9 form the test role;
//! the rest are used for model selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_GROUPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigRole {
    Validation,
    Test,
}

impl ConfigRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfigRole::Validation => "validation",
            ConfigRole::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvConfig {
    pub id: usize,
    pub prediction_train: [usize; 2],
    /// Also the training groups of both retrieval networks.
    pub prediction_valid: [usize; 2],
    pub test: usize,
    pub role: ConfigRole,
}

impl CvConfig {
    pub fn retrieval_train(&self) -> [usize; 2] {
        self.prediction_valid
    }

    fn check(&self) -> Result<()> {
        let mut seen = [false; N_GROUPS];
        let groups = self
            .prediction_train
            .iter()
            .chain(&self.prediction_valid)
            .chain(std::iter::once(&self.test));
        for &g in groups {
            if g >= N_GROUPS || seen[g] {
                return Err(Error::Schema(format!(
                    "configuration {} does not partition the groups",
                    self.id
                )));
            }
            seen[g] = true;
        }
        Ok(())
    }
}

const fn row(
    id: usize,
    train: [usize; 2],
    valid: [usize; 2],
    test: usize,
    role: ConfigRole,
) -> CvConfig {
    CvConfig {
        id,
        prediction_train: train,
        prediction_valid: valid,
        test,
        role,
    }
}

use ConfigRole::{Test as T, Validation as V};

pub const CV_CONFIGS: [CvConfig; 10] = [
    row(0, [0, 1], [2, 3], 4, V),
    row(1, [0, 2], [1, 4], 3, V),
    row(2, [0, 3], [1, 2], 4, T),
    row(3, [0, 4], [1, 3], 2, V),
    row(4, [1, 2], [3, 4], 0, V),
    row(5, [1, 3], [2, 4], 0, T),
    row(6, [1, 4], [0, 3], 2, T),
    row(7, [2, 3], [0, 4], 1, V),
    row(8, [2, 4], [0, 1], 3, T),
    row(9, [3, 4], [0, 2], 1, T),
];

/// The configuration table after checking that every row partitions the
/// groups and ids match positions.
pub fn cv_configs() -> Result<&'static [CvConfig; 10]> {
    for (i, c) in CV_CONFIGS.iter().enumerate() {
        if c.id != i {
            return Err(Error::Schema(format!(
                "configuration row {i} has id {}",
                c.id
            )));
        }
        c.check()?;
    }
    Ok(&CV_CONFIGS)
}

pub fn cv_config(id: usize) -> Result<CvConfig> {
    cv_configs()?
        .get(id)
        .copied()
        .ok_or_else(|| Error::Config(format!("configuration id {id} is not in 0..=9")))
}

pub fn configs_with_role(role: ConfigRole) -> Vec<usize> {
    CV_CONFIGS
        .iter()
        .filter(|c| c.role == role)
        .map(|c| c.id)
        .collect()
}

/// Parses `2,5,6`, `test` or `validation` / `all`.
pub fn parse_config_list(s: &str) -> Result<Vec<usize>> {
    let list = match s.trim() {
        "test" => configs_with_role(ConfigRole::Test),
        "validation" => configs_with_role(ConfigRole::Validation),
        "all" => (0..CV_CONFIGS.len()).collect(),
        other => other
            .split(',')
            .map(|t| {
                let t = t.trim();
                let id: usize = t
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid configuration id `{t}`")))?;
                cv_config(id).map(|c| c.id)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let mut sorted = list.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != list.len() {
        return Err(Error::Config(format!("repeated configuration id in `{s}`")));
    }
    if sorted.is_empty() {
        return Err(Error::Config("no configuration selected".into()));
    }
    Ok(sorted)
}
