#![no_main]

use std::collections::BTreeMap;

use libfuzzer_sys::fuzz_target;

use mosafe_core::fault_tree::FaultTree;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(tree) = FaultTree::from_json(text) else { return };
    let _ = tree.to_dot();
    if tree.validate().is_err() || tree.leaf_ids().len() > 12 {
        return;
    }
    let probs: BTreeMap<String, f64> = tree.leaf_ids().into_iter().map(|id| (id.to_string(), 0.01)).collect();
    if let (Ok(exact), Ok(approx)) = (tree.eval_exact(&probs), tree.eval_rare_approx(&probs)) {
        assert!((0.0..=1.0).contains(&exact.probability));
        assert!(approx.error_bound >= 0.0);
    }
    let back = FaultTree::from_json(&tree.to_json()).expect("serialized tree parses");
    assert_eq!(back, tree);
});
