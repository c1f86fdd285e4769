use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto};

use super::config::{KeyDist, TableSpec};
use crate::error::Result;
use crate::model::{NodeId, Partition, Row};

const KEY_SPACE: u64 = 1 << 32;

fn table_seed(name: &str, seed: u64) -> u64 {
    // FNV-1a over the name keeps tables independent under one seed.
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64 ^ seed, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        })
}

/// Draws `rows` keys in `[0, 2^32)`.
///
/// Uniform keys are stratified (one per equal-width stratum, jittered, then
/// shuffled) so key ranges carry near-identical row counts. Pareto keys are
/// `scale · (x − 1)` for `x ~ Pareto(1, alpha)`, so small keys dominate.
fn draw_keys(rows: u64, dist: KeyDist, rng: &mut ChaCha8Rng) -> Vec<u64> {
    match dist {
        KeyDist::Uniform => {
            let mut keys: Vec<u64> = (0..rows)
                .map(|i| {
                    let u: f64 = rng.gen();
                    (((i as f64 + u) / rows as f64) * KEY_SPACE as f64) as u64
                })
                .map(|k| k.min(KEY_SPACE - 1))
                .collect();
            keys.shuffle(rng);
            keys
        }
        KeyDist::Pareto(alpha) => {
            let pareto = Pareto::new(1.0, alpha).expect("alpha validated");
            let scale = KEY_SPACE as f64 / 64.0;
            (0..rows)
                .map(|_| ((pareto.sample(rng) - 1.0) * scale).min((KEY_SPACE - 1) as f64) as u64)
                .collect()
        }
    }
}

/// Generates a table as `partitions` partitions over equal-width key ranges
/// of `[0, 2^32)`, rows stored in key order. Each row carries `size / rows`
/// payload bytes; the table's last row also carries the remainder. Homes are
/// placeholders until the table is loaded.
pub fn gen_table(spec: &TableSpec, partitions: u32, seed: u64) -> Result<Vec<Partition>> {
    spec.validate()?;
    let partitions = partitions.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(table_seed(&spec.name, seed));
    let keys = draw_keys(spec.rows, spec.dist, &mut rng);

    let size = spec.size_bytes();
    let per_row = size / spec.rows;
    let remainder = size - per_row * spec.rows;
    let width = KEY_SPACE.div_ceil(partitions as u64);

    let mut parts: Vec<Vec<Row>> = vec![Vec::new(); partitions as usize];
    for (tag, key) in keys.into_iter().enumerate() {
        parts[(key / width) as usize].push(Row::new(key, per_row, tag as u64));
    }
    for rows in &mut parts {
        rows.sort_by_key(|r| (r.key, r.payload_tag));
    }
    if let Some(last) = parts.iter_mut().rev().find_map(|rows| rows.last_mut()) {
        last.payload_bytes += remainder;
    }
    Ok(parts
        .into_iter()
        .enumerate()
        .map(|(p, rows)| Partition::new(spec.name.clone(), p as u32, rows, NodeId(0)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MB;

    #[test]
    fn uniform_is_balanced() {
        let spec = TableSpec::new("A", 400.0, 4000, KeyDist::Uniform);
        let parts = gen_table(&spec, 8, 42).unwrap();
        assert_eq!(parts.len(), 8);
        let total: u64 = parts.iter().map(|p| p.size_bytes).sum();
        assert_eq!(total, 400 * MB);
        for p in &parts {
            let share = p.size_bytes as f64 / (50 * MB) as f64;
            assert!((share - 1.0).abs() < 0.01, "partition {} at {share}", p.part_id);
        }
    }

    #[test]
    fn pareto_is_skewed() {
        let spec = TableSpec::new("T", 800.0, 8000, KeyDist::Pareto(1.16));
        let parts = gen_table(&spec, 8, 42).unwrap();
        let sizes: Vec<u64> = parts.iter().map(|p| p.size_bytes).collect();
        let mean = sizes.iter().sum::<u64>() as f64 / sizes.len() as f64;
        let max = *sizes.iter().max().unwrap() as f64;
        assert!(max >= 2.0 * mean, "max {max} mean {mean}");
    }

    #[test]
    fn single_row_and_determinism() {
        let spec = TableSpec::new("one", 3.0, 1, KeyDist::Uniform);
        let parts = gen_table(&spec, 4, 1).unwrap();
        let rows: Vec<&Row> = parts.iter().flat_map(|p| &p.rows).collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].payload_bytes, 3 * MB);

        let spec = TableSpec::new("odd", 1.0, 7, KeyDist::Pareto(2.0));
        assert_eq!(gen_table(&spec, 3, 5).unwrap(), gen_table(&spec, 3, 5).unwrap());
        assert_ne!(gen_table(&spec, 3, 5).unwrap(), gen_table(&spec, 3, 6).unwrap());
        let total: u64 = gen_table(&spec, 3, 5).unwrap().iter().map(|p| p.size_bytes).sum();
        assert_eq!(total, MB);
        assert!(gen_table(&TableSpec::new("bad", 1.0, 0, KeyDist::Uniform), 1, 0).is_err());
    }
}
