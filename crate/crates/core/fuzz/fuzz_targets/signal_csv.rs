#![no_main]

use dmrirecon::signal::SignalSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let Ok(set) = SignalSet::from_csv(text) else { return };
    let again = SignalSet::from_csv(&set.to_csv()).expect("written csv parses");
    assert_eq!(again.len(), set.len());
});
