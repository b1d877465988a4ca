#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok((points, base)) = dmrirecon::mesh::parse_node(text, "fuzz") {
        assert!(base <= 1);
        assert!(points.iter().all(|p| p.iter().all(|x| x.is_finite())));
    }
});
