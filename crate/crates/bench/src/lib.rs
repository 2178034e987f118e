//! Inputs shared by the benchmarks.

use synfl::dataset::{synth_generate, SynthConfig};
use synfl::flsim::EncodedDataset;
use synfl::mapping::EncodingSchema;
use synfl::RTDataset;

/// Default generator with `records` rows.
pub fn dataset(records: usize, seed: u64) -> RTDataset {
    let cfg = SynthConfig {
        records,
        ..SynthConfig::default()
    };
    synth_generate(&cfg, seed).expect("default generator config is valid")
}

/// One-hot leaf encoding of every QID.
pub fn encoded(d: &RTDataset) -> EncodedDataset {
    let all: Vec<usize> = (0..d.schema.qids().len()).collect();
    let enc = EncodingSchema::leaves(&d.schema, &all);
    EncodedDataset::encode(&d.schema, &enc, &d.records).expect("leaf encoding covers raw records")
}
