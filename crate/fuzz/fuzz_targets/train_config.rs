#![no_main]

use libfuzzer_sys::fuzz_target;
use outpaint::trainer::{lr_at, TrainConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = TrainConfig::from_toml(text) {
        for epoch in [0, config.decay_start_epoch, config.epochs] {
            let (g, d) = lr_at(epoch, &config);
            assert!(g.is_finite() && d.is_finite());
        }
    }
});
