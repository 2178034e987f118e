mod support;

use rand::prelude::*;
use support::{random_synth, rng, soundness_errors};
use synfl::anonymizer::{anonymize, AnonymizationParams};
use synfl::dataset::synth_generate;
use synfl::metrics::ncp_dataset;
use synfl::verifier::{verify_k_km, DEFAULT_BUDGET};

#[test]
fn random_datasets_anonymize_soundly() {
    let mut r = rng(21);
    for case in 0..30u64 {
        let cfg = random_synth(&mut r);
        let d = synth_generate(&cfg, case).unwrap();
        let k = *[2, 3, 5, 10].choose(&mut r).unwrap();
        let m = r.random_range(1..=2);
        let delta = *[0.5, 0.95].choose(&mut r).unwrap();
        let p = AnonymizationParams::new(&d.schema, k, m, delta, case);
        let (out, _) = anonymize(&d, &p).unwrap();
        let ctx = format!("case {case}: n={} items={} k={k} m={m} delta={delta}", d.len(), cfg.items);
        let v = verify_k_km(&d.schema, &out.records, k, m, DEFAULT_BUDGET).unwrap();
        assert!(v.is_empty(), "{ctx}: {} violations", v.len());
        let errs = soundness_errors(&d.schema, &d.records, &out.records);
        assert!(errs.is_empty(), "{ctx}: {errs:?}");
        if out.stats.formed_ncp <= delta {
            let ncp = ncp_dataset(&d.schema, &out.records, &p.weights).unwrap();
            assert!(ncp <= delta + 1e-12, "{ctx}: ncp {ncp}");
        }
    }
}
