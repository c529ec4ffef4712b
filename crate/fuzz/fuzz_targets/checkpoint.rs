#![no_main]

use candle_core::Device;
use libfuzzer_sys::fuzz_target;
use outpaint::networks::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data, &Device::Cpu) {
        let _ = outpaint::trainer::trainer_meta(&ck);
        let _ = ck.to_bytes();
    }
});
