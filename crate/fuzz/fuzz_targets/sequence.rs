#![no_main]

use libfuzzer_sys::fuzz_target;

use mosafe_core::ErrorSequence;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rho) = text.parse::<ErrorSequence>() {
        let again: ErrorSequence = rho.to_string().parse().expect("display output parses");
        assert_eq!(rho, again);
        assert!(rho.steps().iter().all(|&k| k < rho.n_max()));
    }
});
