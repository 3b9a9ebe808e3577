mod common;

use common::oracles::ica_two_source_recovery;

#[test]
fn two_sources_recovered_for_ten_seeds() {
    for seed in 0..10u64 {
        let best = ica_two_source_recovery(seed);
        assert!(best > 0.99, "seed {seed}: best matched |corr| {best}");
    }
}
