use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
    Labeled,
    Unlabeled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitScheme {
    /// train / val / test
    Source,
    /// labeled / unlabeled
    Target,
}

impl SplitScheme {
    fn roles(self) -> &'static [Role] {
        match self {
            SplitScheme::Source => &[Role::Train, Role::Val, Role::Test],
            SplitScheme::Target => &[Role::Labeled, Role::Unlabeled],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMasks {
    roles: Vec<Role>,
}

impl SplitMasks {
    pub fn from_roles(roles: Vec<Role>) -> Self {
        Self { roles }
    }

    pub fn role(&self, u: usize) -> Role {
        self.roles[u]
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn nodes(&self, role: Role) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, &r)| r == role)
            .map(|(u, _)| u)
            .collect()
    }

    pub fn count(&self, role: Role) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }
}

/// Exact-count random split: nodes are shuffled with a seeded RNG and the
/// permutation is cut into consecutive ranges sized from `fractions`.
pub fn make_splits(num_nodes: usize, scheme: SplitScheme, fractions: &[f64], seed: u64) -> Result<SplitMasks> {
    let roles = scheme.roles();
    if fractions.len() != roles.len() {
        return Err(Error::Config(format!(
            "{} fractions given, scheme needs {}",
            fractions.len(),
            roles.len()
        )));
    }
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::Config("split fractions must be non-negative".into()));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config("split fractions must sum to 1".into()));
    }
    let counts = exact_counts(num_nodes, fractions);

    let mut order: Vec<usize> = (0..num_nodes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assigned = vec![roles[0]; num_nodes];
    let mut start = 0;
    for (&role, &count) in roles.iter().zip(&counts) {
        for &u in &order[start..start + count] {
            assigned[u] = role;
        }
        start += count;
    }
    Ok(SplitMasks { roles: assigned })
}

/// Largest-remainder apportionment of `n` items to the given proportions.
pub(crate) fn exact_counts(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    // the epsilon absorbs products like 0.6 * 6000 = 3599.9999999999995
    let mut counts: Vec<usize> = raw.iter().map(|r| (r + 1e-9).floor() as usize).collect();
    let mut remaining = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - counts[a] as f64;
        let fb = raw[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}
