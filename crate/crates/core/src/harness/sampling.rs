use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::task::Task;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotSetting {
    /// One demonstration draw shared by every test example.
    #[default]
    Fixed,
    /// A fresh draw per test example.
    Nonfixed,
}

impl fmt::Display for ShotSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShotSetting::Fixed => "fixed",
            ShotSetting::Nonfixed => "nonfixed",
        })
    }
}

impl FromStr for ShotSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(ShotSetting::Fixed),
            "nonfixed" | "non-fixed" => Ok(ShotSetting::Nonfixed),
            _ => Err(Error::Argument(format!(
                "unknown sampling setting {s:?}; expected fixed or nonfixed"
            ))),
        }
    }
}

/// Seed of the per-example stream used by the non-fixed setting.
pub fn example_stream_seed(seed: u64, example_index: usize) -> u64 {
    seed ^ example_index as u64
}

/// Draws `k` demonstration indices without replacement, never returning
/// `exclude`.
///
/// Fixed: a `ChaCha8Rng::seed_from_u64(seed)` shuffle of all indices; the
/// result is its first `k` entries after dropping `exclude`, so any test
/// example outside the draw sees the same list.
///
/// Non-fixed: the pool without `exclude`, shuffled by
/// `ChaCha8Rng::seed_from_u64(seed ^ exclude)`; the first `k` entries.
pub fn sample_shots(
    task: &Task,
    k: usize,
    seed: u64,
    setting: ShotSetting,
    exclude: Option<usize>,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let n = task.examples.len();
    if n < k + 1 {
        return Err(Error::Argument(format!(
            "{k}-shot sampling needs at least {} examples, task {:?} has {n}",
            k + 1,
            task.name
        )));
    }
    match setting {
        ShotSetting::Fixed => {
            let mut pool: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            pool.shuffle(&mut rng);
            Ok(pool
                .into_iter()
                .filter(|&i| Some(i) != exclude)
                .take(k)
                .collect())
        }
        ShotSetting::Nonfixed => {
            let test = exclude.ok_or_else(|| {
                Error::Argument("non-fixed sampling needs the test example index".into())
            })?;
            let mut pool: Vec<usize> = (0..n).filter(|&i| i != test).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(example_stream_seed(seed, test));
            pool.shuffle(&mut rng);
            pool.truncate(k);
            Ok(pool)
        }
    }
}
