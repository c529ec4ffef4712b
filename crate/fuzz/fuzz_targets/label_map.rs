#![no_main]

use libfuzzer_sys::fuzz_target;
use outpaint::layout_data::io::{decode_label_map, encode_label_map};

// First byte picks the class count.
fuzz_target!(|data: &[u8]| {
    let Some((&classes, png)) = data.split_first() else {
        return;
    };
    let classes = usize::from(classes).max(1);
    if let Ok(layout) = decode_label_map(png, classes) {
        assert!(layout.labels().iter().all(|&l| usize::from(l) < classes));
        let again = decode_label_map(&encode_label_map(&layout).unwrap(), classes).unwrap();
        assert_eq!(again, layout);
    }
});
