#![no_main]

use libfuzzer_sys::fuzz_target;

use mosafe_core::{Pattern, SequenceSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = text.parse::<Pattern>() {
        let again: Pattern = p.to_string().parse().expect("display output parses");
        assert_eq!(p, again);
        if p.n_max() <= 512 {
            for rho in p.sample(0, 2) {
                assert!(p.contains(&rho).unwrap());
            }
        }
    }
    if let Ok(spec) = text.parse::<SequenceSpec>() {
        let _ = spec.n_max();
    }
});
