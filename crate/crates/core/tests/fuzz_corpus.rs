//! Replays the checked-in fuzz seeds through the same entry points on stable,
//! plus every truncation of each seed, which must fail cleanly or parse.

use std::path::Path;

use dmrirecon::laplace_eig::{decode_basis, encode_basis};
use dmrirecon::mesh::{parse_ele, parse_node};
use dmrirecon::sequence::GradientScheme;
use dmrirecon::signal::SignalSet;
use dmrirecon::sparse::parse_matrix_market;
use dmrirecon::spectral::{coefficients_from_csv, coefficients_to_csv, decode_spectrum, encode_spectrum};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn prefixes(data: &[u8]) -> impl Iterator<Item = &[u8]> {
    (0..data.len()).map(move |n| &data[..n])
}

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

#[test]
fn tetgen_seeds() {
    for (name, data) in seeds("tetgen_node") {
        let s = text(&data).unwrap();
        assert!(parse_node(s, &name).is_ok(), "{name}");
        prefixes(&data).filter_map(text).for_each(|t| drop(parse_node(t, &name)));
    }
    for (name, data) in seeds("tetgen_ele") {
        let base = (data[0] & 1) as usize;
        assert!(parse_ele(text(&data[1..]).unwrap(), &name, base).is_ok(), "{name}");
        prefixes(&data[1..]).filter_map(text).for_each(|t| drop(parse_ele(t, &name, base)));
    }
}

#[test]
fn matrix_market_seeds() {
    for (name, data) in seeds("matrix_market") {
        let m = parse_matrix_market(text(&data).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(m.nrows(), m.ncols());
        prefixes(&data).filter_map(text).for_each(|t| drop(parse_matrix_market(t)));
    }
}

#[test]
fn scheme_seeds() {
    for (name, data) in seeds("scheme_json") {
        let s = GradientScheme::from_json(text(&data).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(GradientScheme::from_json(&s.to_json()).unwrap(), s);
        prefixes(&data).filter_map(text).for_each(|t| drop(GradientScheme::from_json(t)));
    }
}

#[test]
fn signal_and_coefficient_seeds() {
    for (name, data) in seeds("signal_csv") {
        let s = SignalSet::from_csv(text(&data).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(SignalSet::from_csv(&s.to_csv()).unwrap().len(), s.len());
        prefixes(&data).filter_map(text).for_each(|t| drop(SignalSet::from_csv(t)));
    }
    for (name, data) in seeds("coefficients_csv") {
        let c = coefficients_from_csv(text(&data).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(coefficients_from_csv(&coefficients_to_csv(&c)).unwrap(), c);
        prefixes(&data).filter_map(text).for_each(|t| drop(coefficients_from_csv(t)));
    }
}

#[test]
fn binary_cache_seeds() {
    for (name, data) in seeds("basis_cache") {
        let (key, pairs) = decode_basis(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_basis(&key, &pairs), data);
        prefixes(&data).for_each(|d| assert!(decode_basis(d).is_err()));
    }
    for (name, data) in seeds("spectrum_cache") {
        let (key, values, phi) = decode_spectrum(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_spectrum(&key, &values, &phi), data);
        prefixes(&data).for_each(|d| assert!(decode_spectrum(d).is_err()));
    }
}
