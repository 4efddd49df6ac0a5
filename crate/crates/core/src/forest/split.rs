//! Train/test split policies.

use std::str::FromStr;

use super::rng::XorShift64;
use super::{Category, ForestError, Labeled};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPolicy {
    /// Fixed sizes: 11861 malicious for training and 10092 for testing,
    /// ten times the malicious training count of benign samples for
    /// training, 10000 benign samples for testing.
    Paper2017,
    /// Malicious halves (training gets the extra sample when odd). Benign
    /// test size matches the malicious test size but is capped at half of
    /// the benign pool; benign training takes ten times the malicious
    /// training count, capped at what is left.
    Scaled,
}

impl FromStr for SplitPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper2017" => Ok(SplitPolicy::Paper2017),
            "scaled" => Ok(SplitPolicy::Scaled),
            _ => Err(format!("unknown split policy `{s}` (expected paper2017 or scaled)")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainTest {
    pub train: Vec<Labeled>,
    pub test: Vec<Labeled>,
}

/// (malicious train, malicious test, benign train, benign test) sizes.
pub fn split_sizes(policy: SplitPolicy, n_mal: usize, n_ben: usize) -> Result<[usize; 4], ForestError> {
    match policy {
        SplitPolicy::Paper2017 => {
            let (mt, ms, bt, bs) = (11861, 10092, 118_610, 10_000);
            if n_mal < mt + ms {
                return Err(ForestError::NotEnoughSamples {
                    policy: "paper2017",
                    category: Category::Malicious,
                    needed: mt + ms,
                    have: n_mal,
                });
            }
            if n_ben < bt + bs {
                return Err(ForestError::NotEnoughSamples {
                    policy: "paper2017",
                    category: Category::Benign,
                    needed: bt + bs,
                    have: n_ben,
                });
            }
            Ok([mt, ms, bt, bs])
        }
        SplitPolicy::Scaled => {
            if n_mal < 2 {
                return Err(ForestError::NotEnoughSamples { policy: "scaled", category: Category::Malicious, needed: 2, have: n_mal });
            }
            if n_ben < 2 {
                return Err(ForestError::NotEnoughSamples { policy: "scaled", category: Category::Benign, needed: 2, have: n_ben });
            }
            let ms = n_mal / 2;
            let mt = n_mal - ms;
            let bs = ms.min(n_ben / 2).max(1);
            let bt = (10 * mt).min(n_ben - bs);
            Ok([mt, ms, bt, bs])
        }
    }
}

/// Shuffles each category with `seed` and cuts it by the policy sizes.
pub fn split_dataset(data: Vec<Labeled>, policy: SplitPolicy, seed: u64) -> Result<TrainTest, ForestError> {
    let (mut mal, mut ben): (Vec<Labeled>, Vec<Labeled>) =
        data.into_iter().partition(|s| s.category == Category::Malicious);
    let [mt, ms, bt, bs] = split_sizes(policy, mal.len(), ben.len())?;
    let mut r = XorShift64::new(seed);
    r.shuffle(&mut mal);
    r.shuffle(&mut ben);
    let mut out = TrainTest::default();
    let mut mal = mal.into_iter();
    out.train.extend(mal.by_ref().take(mt));
    out.test.extend(mal.take(ms));
    let mut ben = ben.into_iter();
    out.train.extend(ben.by_ref().take(bt));
    out.test.extend(ben.take(bs));
    Ok(out)
}
