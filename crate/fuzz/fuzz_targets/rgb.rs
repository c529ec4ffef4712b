#![no_main]

use libfuzzer_sys::fuzz_target;
use outpaint::layout_data::io::{decode_rgb, encode_rgb};

fuzz_target!(|data: &[u8]| {
    if let Ok(pixels) = decode_rgb(data) {
        assert!(pixels.data().iter().all(|v| v.abs() <= 1.0));
        let again = decode_rgb(&encode_rgb(&pixels).unwrap()).unwrap();
        assert_eq!(again.to_rgb8(), pixels.to_rgb8());
    }
});
