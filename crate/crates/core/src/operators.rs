//! Analytics functions executed by the dataplane.
//!
//! Every operator computes real output rows and, separately, the number of
//! bytes of work it declares to the cost model.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{Aggregate, OpParams, Partition, Row};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JoinedRow {
    pub key: u64,
    pub left_tag: u64,
    pub right_tag: u64,
    pub payload_bytes: u64,
}

impl JoinedRow {
    fn of(left: &Row, right: &Row) -> Self {
        debug_assert_eq!(left.key, right.key);
        JoinedRow {
            key: left.key,
            left_tag: left.payload_tag,
            right_tag: right.payload_tag,
            payload_bytes: left.payload_bytes + right.payload_bytes,
        }
    }

    /// Flattens into a storable row; the tag mixes both parent tags.
    pub fn to_row(self) -> Row {
        Row::new(
            self.key,
            self.payload_bytes,
            self.left_tag.rotate_left(32) ^ self.right_tag,
        )
    }
}

/// Functions callable by name from a `DecisionTuple`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FunctionKind {
    ScanMap,
    MergeJoin,
    HashJoin,
    GroupBy,
    /// Data-free task with a fixed duration, used by background chains.
    ChainTask,
}

impl FunctionKind {
    pub const ALL: [FunctionKind; 5] = [
        FunctionKind::ScanMap,
        FunctionKind::MergeJoin,
        FunctionKind::HashJoin,
        FunctionKind::GroupBy,
        FunctionKind::ChainTask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionKind::ScanMap => "scan_map",
            FunctionKind::MergeJoin => "merge_join",
            FunctionKind::HashJoin => "hash_join",
            FunctionKind::GroupBy => "group_by",
            FunctionKind::ChainTask => "chain_task",
        }
    }

    pub fn lookup(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::UnknownFunction(name.to_string()))
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of running one function instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub rows: Vec<Row>,
    /// Bytes of work declared to the cost model (sort work already scaled).
    pub work_bytes: f64,
}

fn bytes(rows: &[Row]) -> u64 {
    rows.iter().map(|r| r.payload_bytes).sum()
}

/// Runs `kind` over its left/right inputs.
pub fn execute(
    kind: FunctionKind,
    params: &OpParams,
    left: Vec<Row>,
    right: Vec<Row>,
    sort_factor: f64,
) -> Execution {
    match kind {
        FunctionKind::ScanMap => {
            let mut rows = left;
            rows.extend(right);
            let work = bytes(&rows) as f64;
            Execution {
                rows: select_smallest(rows, params.selectivity),
                work_bytes: work,
            }
        }
        FunctionKind::GroupBy => {
            let mut rows = left;
            rows.extend(right);
            let work = bytes(&rows) as f64;
            Execution {
                rows: aggregate_rows(&rows, params.aggregate),
                work_bytes: work,
            }
        }
        FunctionKind::MergeJoin => {
            let work = merge_join_work(bytes(&left), bytes(&right), sort_factor);
            let rows = sort_merge_join(&left, &right)
                .into_iter()
                .map(JoinedRow::to_row)
                .collect();
            Execution {
                rows,
                work_bytes: work,
            }
        }
        FunctionKind::HashJoin => {
            let work = hash_join_work(bytes(&right), bytes(&left));
            let rows = hash_join_broadcast(&right, &left)
                .into_iter()
                .map(JoinedRow::to_row)
                .collect();
            Execution {
                rows,
                work_bytes: work,
            }
        }
        FunctionKind::ChainTask => Execution {
            rows: Vec::new(),
            work_bytes: 0.0,
        },
    }
}

/// Declared work of a merge-join instance: scan both sides, then sort both.
pub fn merge_join_work(left_bytes: u64, right_bytes: u64, sort_factor: f64) -> f64 {
    (left_bytes + right_bytes) as f64 * (1.0 + sort_factor)
}

/// Declared work of a hash-join instance: build the full small side, probe its share.
pub fn hash_join_work(build_bytes: u64, probe_bytes: u64) -> f64 {
    (build_bytes + probe_bytes) as f64
}

fn select_smallest(rows: Vec<Row>, selectivity: f64) -> Vec<Row> {
    let sel = selectivity.clamp(0.0, 1.0);
    let keep = (sel * rows.len() as f64).ceil() as usize;
    if keep >= rows.len() {
        return rows;
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| rows[i].key);
    let mut chosen = vec![false; rows.len()];
    for &i in &order[..keep] {
        chosen[i] = true;
    }
    rows.into_iter()
        .zip(chosen)
        .filter_map(|(r, c)| c.then_some(r))
        .collect()
}

/// Keeps the `⌈selectivity·|rows|⌉` rows with the smallest keys (ties by
/// position), in their original order.
pub fn scan_map(part: &Partition, selectivity: f64) -> Partition {
    let rows = select_smallest(part.rows.clone(), selectivity);
    Partition::new(part.table.clone(), part.part_id, rows, part.home)
}

/// Splits rows by `key % buckets`, preserving input order within a bucket.
pub fn hash_partition(part: &Partition, buckets: u32) -> Vec<Partition> {
    let buckets = buckets.max(1);
    let mut out: Vec<Vec<Row>> = vec![Vec::new(); buckets as usize];
    for row in &part.rows {
        out[(row.key % buckets as u64) as usize].push(*row);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, rows)| Partition::new(part.table.clone(), i as u32, rows, part.home))
        .collect()
}

pub(crate) fn bucket_rows(rows: &[Row], index: u32, of: u32) -> Vec<Row> {
    let of = of.max(1) as u64;
    rows.iter()
        .filter(|r| r.key % of == index as u64)
        .copied()
        .collect()
}

pub(crate) fn chunk_rows(rows: &[Row], index: u32, of: u32) -> Vec<Row> {
    let of = of.max(1) as usize;
    let i = index as usize;
    let lo = rows.len() * i / of;
    let hi = rows.len() * (i + 1) / of;
    rows[lo..hi].to_vec()
}

/// Equi-join of co-partitioned inputs by sorting both sides stably and merging.
pub fn sort_merge_join(left: &[Row], right: &[Row]) -> Vec<JoinedRow> {
    let mut l = left.to_vec();
    let mut r = right.to_vec();
    l.sort_by_key(|row| row.key);
    r.sort_by_key(|row| row.key);

    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < l.len() && j < r.len() {
        let (lk, rk) = (l[i].key, r[j].key);
        if lk < rk {
            i += 1;
        } else if lk > rk {
            j += 1;
        } else {
            let li = l[i..].iter().take_while(|x| x.key == lk).count();
            let rj = r[j..].iter().take_while(|x| x.key == lk).count();
            for a in &l[i..i + li] {
                for b in &r[j..j + rj] {
                    out.push(JoinedRow::of(a, b));
                }
            }
            i += li;
            j += rj;
        }
    }
    out
}

/// Builds a hash map over the full `build` side and probes it with `probe`,
/// keeping probe order.
pub fn hash_join_broadcast(build: &[Row], probe: &[Row]) -> Vec<JoinedRow> {
    let mut table: HashMap<u64, Vec<&Row>> = HashMap::with_capacity(build.len());
    for row in build {
        table.entry(row.key).or_default().push(row);
    }
    let mut out = Vec::new();
    for p in probe {
        if let Some(matches) = table.get(&p.key) {
            out.extend(matches.iter().map(|b| JoinedRow::of(p, b)));
        }
    }
    out
}

fn aggregate_rows(rows: &[Row], agg: Aggregate) -> Vec<Row> {
    // key -> (count, byte sum, widest row)
    let mut groups: BTreeMap<u64, (u64, u64, u64)> = BTreeMap::new();
    for r in rows {
        let g = groups.entry(r.key).or_insert((0, 0, 0));
        g.0 += 1;
        g.1 += r.payload_bytes;
        g.2 = g.2.max(r.payload_bytes);
    }
    groups
        .into_iter()
        .map(|(key, (count, sum, width))| {
            let tag = match agg {
                Aggregate::Count => count,
                Aggregate::SumBytes => sum,
            };
            Row::new(key, width, tag)
        })
        .collect()
}

/// One row per distinct key, ascending. The output row keeps the width of the
/// widest row in its group.
pub fn group_by_aggregate(part: &Partition, agg: Aggregate) -> Partition {
    Partition::new(
        part.table.clone(),
        part.part_id,
        aggregate_rows(&part.rows, agg),
        part.home,
    )
}

/// Exhaustive O(n·m) equi-join used as the reference for join equivalence.
pub fn nested_loop_join_oracle(left: &[Row], right: &[Row]) -> Vec<JoinedRow> {
    let mut out = Vec::new();
    for a in left {
        for b in right {
            if a.key == b.key {
                out.push(JoinedRow::of(a, b));
            }
        }
    }
    out
}
