//! Life of a mainchain vertex, driven by hand: genesis, shard submissions,
//! tip selection with candidacy counts, and freshness-based pruning of a
//! vertex nobody ever picked.

use chainfl::learning::ParamVector;
use chainfl::mainchain::{DagLedger, MainchainTx};
use chainfl::sim::RngFactory;
use chainfl::store::{put_params, MemoryStore};

fn main() {
    let mut store = MemoryStore::new();
    let factory = RngFactory::new(9);
    // Freshness window F = 40 ticks: a tip that earns no candidacy within
    // its window gets pruned.
    let mut dag = DagLedger::new(Some(40));
    let w0 = put_params(&mut store, &ParamVector::new(vec![0.0; 3]).unwrap()).unwrap();
    dag.create_genesis(b"demo-task", "demo", w0, 0).unwrap();
    let genesis = dag.genesis_id().unwrap();
    println!("genesis {}", &genesis.to_hex()[..12]);

    let submit = |dag: &mut DagLedger, store: &mut MemoryStore, sender: &str, v: f64, approves: Vec<_>, t: u64| {
        let h = put_params(store, &ParamVector::new(vec![v; 3]).unwrap()).unwrap();
        let tx = MainchainTx::new(sender.to_string(), "demo".to_string(), h, approves, t);
        let id = tx.tx_id;
        dag.submit_tx(tx, t).unwrap();
        id
    };

    let mut rng = factory.stream("tips", 0, 0);

    // Two shards publish their first iteration models approving genesis.
    let a = submit(&mut dag, &mut store, "shard-0", 0.1, vec![genesis], 10);
    let b = submit(&mut dag, &mut store, "shard-1", 0.2, vec![genesis], 12);

    // A third party publishes a vertex that no one will ever select.
    let orphan = submit(&mut dag, &mut store, "outsider", 9.9, vec![genesis], 15);

    // Shard 0 asks for candidate tips for its next iteration; the picks
    // gain a candidacy, which shields them from pruning until approved.
    let tips = dag.request_tips(2, 20, &mut rng).unwrap();
    let picked: Vec<_> = tips.iter().map(|t| t.tx_id).collect();
    println!("tips at t=20: {:?}", picked.iter().map(|id| id.to_hex()[..12].to_string()).collect::<Vec<_>>());

    let c = submit(&mut dag, &mut store, "shard-0", 0.3, picked, 30);

    for (label, id) in [("a", a), ("b", b), ("orphan", orphan), ("c", c)] {
        let r = dag.record(&id).unwrap();
        println!(
            "t=30 {label:6} status={:8} candidacy={} deadline={:?}",
            r.status.label(),
            r.candidacy_count,
            r.freshness_deadline
        );
    }

    // Time passes the orphan's deadline (15 + 40 = 55): the next ledger
    // touch prunes it. Pruned vertices can never be approved again.
    let pruned = dag.prune_expired(56);
    println!("pruned at t=56: {:?}", pruned.iter().map(|id| id.to_hex()[..12].to_string()).collect::<Vec<_>>());
    let bad = MainchainTx::new("late".into(), "demo".into(), w0, vec![orphan], 60);
    println!("approving it now: {:?}", dag.submit_tx(bad, 60).unwrap_err());

    println!("\nfinal ledger:");
    print!("{}", dag.export());
    assert!(dag.verify_structure());
}
