mod support {
    pub mod oracle;
}

use dldp_core::seeded_rng;
use support::oracle::{compare, random_instance};

#[test]
fn metrics_equal_brute_force_on_random_instances() {
    let mut rng = seeded_rng(2024);
    let mut checked = 0;
    for case in 0..60 {
        let inst = random_instance(&mut rng);
        if let Some(dev) = compare(&inst, 10).unwrap_or_else(|e| panic!("case {case}: {e}")) {
            assert!(dev <= 1e-12, "case {case}: deviation {dev}");
            checked += 1;
        }
    }
    assert!(checked >= 50, "only {checked} evaluable instances");
}
