use crate::error::{Error, Result};
use crate::model::{NodeId, NodeStatus, PolicyKind, SchedulePolicy};

/// Instance `i` goes to `nodes[i mod |nodes|]`, ignoring free slots.
pub fn place_round_robin(scale: u32, nodes: &[NodeId], _status: &NodeStatus) -> Result<Vec<NodeId>> {
    if nodes.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    Ok((0..scale as usize).map(|i| sorted[i % sorted.len()]).collect())
}

/// Fills nodes in (free slots desc, id asc) order up to their free slots;
/// instances beyond the total free count cycle over the same order.
pub fn place_packing(scale: u32, nodes: &[NodeId], status: &NodeStatus) -> Result<Vec<NodeId>> {
    if nodes.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let mut order: Vec<(NodeId, u32)> = nodes
        .iter()
        .map(|&n| Ok((n, status.free(n)?)))
        .collect::<Result<_>>()?;
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut out = Vec::with_capacity(scale as usize);
    for &(node, free) in &order {
        let take = free.min(scale - out.len() as u32);
        out.extend(std::iter::repeat(node).take(take as usize));
        if out.len() as u32 == scale {
            return Ok(out);
        }
    }
    let mut i = 0;
    while (out.len() as u32) < scale {
        out.push(order[i % order.len()].0);
        i += 1;
    }
    Ok(out)
}

pub fn place(scale: u32, policy: &SchedulePolicy, status: &NodeStatus) -> Result<Vec<NodeId>> {
    match policy.kind {
        PolicyKind::RoundRobin => place_round_robin(scale, policy.candidate_nodes(), status),
        PolicyKind::Packing => place_packing(scale, policy.candidate_nodes(), status),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn round_robin_examples() {
        let s = NodeStatus::uniform(4, 2);
        assert_eq!(place_round_robin(4, &ids(&[0, 1]), &s).unwrap(), ids(&[0, 1, 0, 1]));
        assert_eq!(place_round_robin(1, &ids(&[3]), &s).unwrap(), ids(&[3]));
        let p = place_round_robin(7, &ids(&[0, 1, 2]), &s).unwrap();
        let counts: Vec<usize> = (0..3).map(|n| p.iter().filter(|x| x.0 == n).count()).collect();
        assert_eq!(counts, vec![3, 2, 2]);
        assert!(matches!(
            place_round_robin(2, &[], &s),
            Err(Error::EmptyCandidateSet)
        ));
    }

    #[test]
    fn packing_examples() {
        let s = NodeStatus::from_free(8, &[2, 2]);
        assert_eq!(place_packing(3, &ids(&[0, 1]), &s).unwrap(), ids(&[0, 0, 1]));
        let s = NodeStatus::from_free(8, &[8]);
        assert_eq!(place_packing(2, &ids(&[0]), &s).unwrap(), ids(&[0, 0]));
        let s = NodeStatus::from_free(8, &[2, 1]);
        assert_eq!(
            place_packing(5, &ids(&[0, 1]), &s).unwrap(),
            ids(&[0, 0, 1, 0, 1])
        );
        let s = NodeStatus::from_free(8, &[1, 3]);
        assert_eq!(place_packing(2, &ids(&[0, 1]), &s).unwrap(), ids(&[1, 1]));
        assert!(place_packing(1, &[], &s).is_err());
    }

    fn status_and_nodes() -> impl Strategy<Value = (NodeStatus, Vec<NodeId>, u32)> {
        prop::collection::vec(0u32..9, 1..8).prop_flat_map(|free| {
            let n = free.len() as u32;
            (
                Just(NodeStatus::from_free(8, &free)),
                prop::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n as usize),
                1u32..40,
            )
                .prop_map(|(s, sub, scale)| (s, sub.into_iter().map(NodeId).collect(), scale))
        })
    }

    proptest! {
        #[test]
        fn cardinality_and_balance((status, nodes, scale) in status_and_nodes()) {
            let rr = place_round_robin(scale, &nodes, &status).unwrap();
            prop_assert_eq!(rr.len(), scale as usize);
            let mut counts: BTreeMap<NodeId, u32> = nodes.iter().map(|&n| (n, 0)).collect();
            for n in &rr {
                *counts.get_mut(n).unwrap() += 1;
            }
            let max = counts.values().max().unwrap();
            let min = counts.values().min().unwrap();
            prop_assert!(max - min <= 1);

            let pk = place_packing(scale, &nodes, &status).unwrap();
            prop_assert_eq!(pk.len(), scale as usize);
            prop_assert!(pk.iter().all(|n| nodes.contains(n)));
        }

        #[test]
        fn packing_uses_fewest_nodes((status, nodes, scale) in status_and_nodes()) {
            let total: u32 = nodes.iter().map(|&n| status.free(n).unwrap()).sum();
            prop_assume!(total >= scale);
            let pk = place_packing(scale, &nodes, &status).unwrap();
            let mut used = pk.clone();
            used.sort();
            used.dedup();
            // Oracle: fewest nodes whose free slots cover `scale`.
            let mut frees: Vec<u32> = nodes.iter().map(|&n| status.free(n).unwrap()).collect();
            frees.sort_unstable_by(|a, b| b.cmp(a));
            let mut acc = 0;
            let mut minimal = 0;
            for f in frees {
                if acc >= scale { break; }
                acc += f;
                minimal += 1;
            }
            prop_assert_eq!(used.len(), minimal);
            for n in &used {
                let c = pk.iter().filter(|x| *x == n).count() as u32;
                prop_assert!(c <= status.free(*n).unwrap());
            }
        }
    }
}
