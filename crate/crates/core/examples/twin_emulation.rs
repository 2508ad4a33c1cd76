//! The twin replays one task's execution window and answers "what if it had
//! offloaded after layer l" for the layers it never reached.

use dt_collab::contvalue::{augment_from_twin, ContValueModel, LayerState};
use dt_collab::cost::CostModel;
use dt_collab::profile::DnnProfile;
use dt_collab::sim::{draw_device_arrival, stream_rng, EdgeInflowSampler, Stream};
use dt_collab::twin::{execution_slots, RawSlot, TwinStore};
use dt_collab::SimConfig;

fn main() -> dt_collab::Result<()> {
    let cfg = SimConfig {
        device_task_prob: 0.02,
        weight_energy: 0.002,
        ..SimConfig::default()
    };
    let profile = DnnProfile::default_for(&cfg);
    let cost = CostModel::new(cfg.clone(), profile.clone());
    let task = 1;
    let slots = execution_slots(0, &profile);
    let window = *slots.last().unwrap() as usize;

    // record what the twin hears over the window
    let mut store = TwinStore::new();
    store.open_window(task, 0, 1, 3e9);
    let mut dev = stream_rng(7, Stream::DeviceArrivals);
    let mut edge = stream_rng(7, Stream::EdgeArrivals);
    let sampler = EdgeInflowSampler::new(&cfg);
    for t in 0..window as u64 {
        let rec = RawSlot {
            arrived: draw_device_arrival(&mut dev, cfg.device_task_prob) as u32,
            background_cycles: sampler.draw(&mut edge),
            offload: None,
        };
        store.record(t, rec)?;
    }
    let snap = store.take_snapshot(task, slots.clone(), &cfg)?;
    println!("window of {window} slots, decision slots {slots:?}");
    for l in 0..=profile.exit_index() {
        println!(
            "  layer {l}: device queue {:>2}, D^lq {:.2} s, edge backlog {:.3} s",
            snap.emu_device_queue[(slots[l] - slots[0]) as usize],
            snap.d_lq_slots(l)? as f64 * cfg.slot_duration_s,
            snap.backlog_at_layer(l)? / cfg.edge_freq_hz
        );
    }

    // the task offloaded at x = 0, so only layer 0 was observed
    let observed = vec![LayerState {
        layer: 0,
        d_lq_s: 0.0,
        t_eq_s: cost.edge_queuing_delay(0, 3e9)?,
    }];
    let model = ContValueModel::new(1);
    for augment in [false, true] {
        let samples = augment_from_twin(&observed, &snap, &cost, &model, augment)?;
        println!("augmentation {augment}: {} samples", samples.len());
        for s in samples {
            println!("  input {:?} target {:.4} ({:?})", s.input, s.target, s.source);
        }
    }
    Ok(())
}
