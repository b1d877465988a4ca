#![no_main]

use dmrirecon::sequence::GradientScheme;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let Ok(scheme) = GradientScheme::from_json(text) else { return };
    let again = GradientScheme::from_json(&scheme.to_json()).expect("written scheme parses");
    assert_eq!(again, scheme);
});
