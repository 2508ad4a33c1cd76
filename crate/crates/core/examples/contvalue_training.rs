//! Fits the continuation-value network to a known function of
//! `(layer, D^lq, T^eq)`, then round-trips it through a checkpoint.

use dt_collab::contvalue::{ContValueModel, SampleSource, TrainingSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn target(layer: f64, d_lq: f64, t_eq: f64) -> f64 {
    0.6 - 0.2 * d_lq - 0.5 * t_eq + 0.05 * layer
}

fn main() -> dt_collab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<TrainingSample> = (0..2000)
        .map(|_| {
            let input = [
                rng.random_range(1..=3) as f64,
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..0.8),
            ];
            TrainingSample::fixed(input, target(input[0], input[1], input[2]), SampleSource::Observed)
        })
        .collect();

    let mut model = ContValueModel::new(11);
    for s in &data {
        model.normalizer.update(&s.input);
    }
    for step in 0..=600 {
        let from = (step * 64) % (data.len() - 64);
        let loss = model.train_step(&data[from..from + 64])?;
        if step % 100 == 0 {
            println!("step {step:>4}  batch loss {loss:.6}");
        }
    }
    println!("full-data loss {:.6}", model.loss(&data)?);
    for (l, d, t) in [(1, 0.0, 0.1), (2, 0.4, 0.3), (3, 0.9, 0.0)] {
        println!(
            "  C({l}, {d}, {t}) = {:.4}  (true {:.4})",
            model.cont_value(l, d, t)?,
            target(l as f64, d, t)
        );
    }

    let path = std::env::temp_dir().join("contvalue_example.json");
    model.save(&path)?;
    let back = ContValueModel::load(&path)?;
    assert_eq!(back.cont_value(2, 0.4, 0.3)?, model.cont_value(2, 0.4, 0.3)?);
    println!("checkpoint round trip ok: {}", path.display());
    Ok(())
}
