//! Cluster-proportional batch sampling.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Largest-remainder apportionment of `b` seats by cluster size. Equal
/// remainders favour the lower cluster index.
pub fn apportion(sizes: &[usize], b: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    if b > total {
        return Err(Error::argument(format!(
            "cannot draw {b} from {total} points"
        )));
    }
    if total == 0 {
        return Ok(vec![0; sizes.len()]);
    }
    // Remainders are kept as exact integers: b * size mod total.
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| b * s / total).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&x, &y| {
        let rx = b * sizes[x] % total;
        let ry = b * sizes[y] % total;
        ry.cmp(&rx).then(x.cmp(&y))
    });
    for &c in order.iter().take(b - assigned) {
        quotas[c] += 1;
    }
    Ok(quotas)
}

/// Draws `b` ids, apportioned across clusters by size and sampled uniformly
/// without replacement inside each cluster. Returned ids are sorted.
pub fn proportional_sample(
    ids: &[String],
    assignments: &[usize],
    b: usize,
    rng_seed: u64,
) -> Result<Vec<String>> {
    if ids.len() != assignments.len() {
        return Err(Error::argument("ids and assignments differ in length"));
    }
    let n_clusters = assignments.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<&String>> = vec![Vec::new(); n_clusters];
    for (id, &c) in ids.iter().zip(assignments) {
        members[c].push(id);
    }
    for m in &mut members {
        m.sort();
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = apportion(&sizes, b)?;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut picked = Vec::with_capacity(b);
    for (cluster, quota) in members.iter().zip(quotas) {
        for idx in sample(&mut rng, cluster.len(), quota) {
            picked.push(cluster[idx].clone());
        }
    }
    picked.sort();
    Ok(picked)
}
