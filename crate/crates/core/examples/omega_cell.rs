//! Optimistic allocation against a shared cell: a stale request conflicts,
//! a deferred high-priority claim wins the next release, and the commit log
//! replays to the same ledger.
//!
//! ```bash
//! cargo run --example omega_cell
//! ```

use extfaas::controlplane::{replay, CommitResult, Demand, GlobalController};
use extfaas::model::{NodeId, Priority};

fn demand(pairs: &[(u32, u32)]) -> Demand {
    pairs.iter().map(|&(n, c)| (NodeId(n), c)).collect()
}

fn main() -> extfaas::Result<()> {
    let mut cell = GlobalController::new(2, 4);
    let mut query = cell.register_app("query", Priority::High)?;
    let mut batch = cell.register_app("batch", Priority::Low)?;

    // Both read the same snapshot and race for node 0.
    let seen = cell.snapshot_cell().version;
    let a = batch.request_at(demand(&[(0, 4)]), seen);
    let b = query.request_at(demand(&[(0, 2), (1, 2)]), seen);
    println!("batch  {:?}", batch.submit(&mut cell, &a)?);
    println!("query  {:?}  (node 0 changed after its snapshot)", query.submit(&mut cell, &b)?);

    // Retrying on a fresh snapshot finds node 0 full; park the request.
    let retry = query.request_at(demand(&[(0, 2), (1, 2)]), cell.snapshot_cell().version);
    match query.submit(&mut cell, &retry)? {
        CommitResult::Insufficient(nodes) => {
            let names: Vec<String> = nodes.iter().map(|n| n.to_string()).collect();
            println!("query  short on {}, deferred", names.join(", "));
        }
        other => println!("query  {other:?}"),
    }
    cell.defer(retry)?;

    // A low-priority request cannot take slots the deferred claim is waiting for.
    println!("batch  {:?}", batch.request(&mut cell, demand(&[(1, 3)]))?);

    cell.set_time(1.0);
    let (_, granted) = batch.release(&mut cell, &demand(&[(0, 2)]))?;
    for g in &granted {
        println!("granted {} {:?} at v{}", g.app, g.demand, g.version);
        query.absorb(&g.demand);
    }
    cell.audit(&[&query, &batch])?;

    println!("\nevent log:");
    for e in cell.events() {
        println!("  t={:.1} {:<6} {:<12} {} x{} {} v{}", e.t, e.app, e.action, e.node, e.count, e.priority, e.version);
    }
    let rebuilt = replay(cell.log(), 2, 4)?;
    println!("\nreplayed ledger matches: {}", &rebuilt == cell.cell());
    Ok(())
}
