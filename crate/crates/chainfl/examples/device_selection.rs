//! Round-start device selection: devices report status, the leader filters
//! by battery and network floors, and a uniform sample of the eligible pool
//! fills the round. Status drifts between rounds via a bounded walk.

use chainfl::device::{report_status, step_status_walk, DeviceProfile};
use chainfl::learning::{Label, LabeledDataset, Sample};
use chainfl::sim::RngFactory;
use chainfl::subchain::select_devices;

fn main() {
    let factory = RngFactory::new(31);
    let data = LabeledDataset::new(vec![Sample {
        features: vec![0.0, 0.0],
        label: Label::Real(0.0),
    }])
    .unwrap();

    let mut pool: Vec<DeviceProfile> = (0..10u32)
        .map(|device_id| DeviceProfile {
            device_id,
            dataset: data.clone(),
            battery: 0.3 + 0.07 * device_id as f64,
            network_quality: 0.95 - 0.05 * device_id as f64,
            willing: device_id != 4,
            compute_delay: 10,
        })
        .collect();

    let mut select_rng = factory.stream("device_select", 0, 0);
    for round in 0..4u64 {
        let reports: Vec<_> = pool.iter().map(|p| report_status(p, round * 100)).collect();
        let eligible = reports
            .iter()
            .filter(|r| r.willing && r.battery >= 0.35 && r.network_quality >= 0.5)
            .count();
        match select_devices(&reports, 4, 0.35, 0.5, &mut select_rng) {
            Some(chosen) => println!("round {round}: {eligible} eligible, selected {chosen:?}"),
            None => println!("round {round}: {eligible} eligible, postponed (need 4)"),
        }

        // Battery and network drift before the next report.
        for p in pool.iter_mut() {
            let mut rng = factory.stream("walk", p.device_id as u64, round);
            step_status_walk(p, 0.08, 0.1, &mut rng);
        }
    }
}
