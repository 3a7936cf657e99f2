//! Kept in its own test binary: the optimizer step counter is process-wide.

mod common;

use skelood::harness::{run_intraclass, run_intradataset, temperature_sweep};
use skelood::numcore::optimizer_steps_taken;

#[test]
fn intradataset_and_sweep_reuse_saved_models() {
    let cfg = common::tiny();
    let dir = tempfile::tempdir().unwrap();
    let before = optimizer_steps_taken();
    run_intraclass(&cfg, dir.path()).unwrap();
    let trained = optimizer_steps_taken();
    assert!(trained > before);
    run_intradataset(&cfg, dir.path(), None).unwrap();
    temperature_sweep(&cfg, dir.path(), &[1.0, 100.0]).unwrap();
    assert_eq!(optimizer_steps_taken(), trained);
}
