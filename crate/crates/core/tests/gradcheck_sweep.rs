use converter_core::gradcheck::{registry, sweep_case};

#[test]
fn every_registered_op_passes() {
    for case in registry(false) {
        let r = sweep_case(&case, 3, 1e-5, 11).unwrap();
        println!("{:<24} {:.3e}", r.op, r.max_rel_error);
        assert!(r.passed, "{} {:e}", r.op, r.max_rel_error);
    }
}
