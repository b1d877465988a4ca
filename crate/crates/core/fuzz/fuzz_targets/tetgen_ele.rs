#![no_main]

use libfuzzer_sys::fuzz_target;

// First byte picks the index base, the rest is the .ele text.
fuzz_target!(|data: &[u8]| {
    let Some((&b, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let base = (b & 1) as usize;
    let _ = dmrirecon::mesh::parse_ele(text, "fuzz", base);
});
