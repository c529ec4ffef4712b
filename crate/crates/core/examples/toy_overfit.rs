//! Trains one stage on the desk dataset and prints the 20-step moving
//! average of its reconstruction loss.
//!
//! `cargo run --release --example toy_overfit -- <stage 1|2> [steps] [data dir]`

use std::path::PathBuf;
use std::time::Instant;

use candle_core::Device;
use outpaint::layout_data::{DatasetProfile, Manifest, Split};
use outpaint::trainer::{AblationMode, TrainConfig, TrainSet, TrainStage, Trainer};

fn main() -> outpaint::Result<()> {
    let mut args = std::env::args().skip(1);
    let stage: u8 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| "data/toy".into());

    let profile = DatasetProfile::desk();
    let manifest = Manifest::load(&dir.join("manifest.tsv"))?;
    let data = TrainSet::new(manifest.load_samples(Split::Train, &profile)?)?;
    let stage = TrainStage::resolve(stage, AblationMode::Full)?;
    let mut trainer = Trainer::new(stage, TrainConfig::desk(), profile.num_classes, profile.width_divisor, &Device::Cpu)?;
    let key = if stage == TrainStage::Layout { "ce" } else { "l1" };

    let start = Instant::now();
    let mut values = Vec::new();
    for _ in 0..steps {
        let out = trainer.step(&data)?;
        values.push(out.record.losses[key]);
        if values.len() >= 20 {
            let ma: f64 = values[values.len() - 20..].iter().sum::<f64>() / 20.0;
            println!("step {:4} {key} {:.5} ma {:.5} d {:.4} ({:.1}s)", out.record.step, values.last().unwrap(), ma, out.record.losses["d"], start.elapsed().as_secs_f64());
        }
    }
    Ok(())
}
