//! Randomized gradient checks: conditional backward against the dense
//! chain rule and central finite differences, plus batch norm, the loss and
//! a small end-to-end network.
//!
//! cargo run --release --example grad_check

use tel::gradcheck::{check_end_to_end, run_suite, SuiteConfig, Tolerance};

fn main() -> tel::error::Result<()> {
    let report = run_suite(&SuiteConfig {
        trials: 100,
        ..SuiteConfig::default()
    })?;
    println!("forward vs dense      max rel err {:.2e}", report.forward_max_rel_err);
    println!(
        "backward vs dense     max rel err {:.2e} ({} entries)",
        report.dense.max_rel_err, report.dense.checked
    );
    println!(
        "backward vs FD        max rel err {:.2e} ({} entries, {} near a ramp boundary skipped)",
        report.fd.max_rel_err, report.fd.checked, report.fd.skipped
    );

    let net = check_end_to_end(0, Tolerance { rel: 1e-4, abs: 1e-8 })?;
    println!("network vs FD         max rel err {:.2e} ({} entries)", net.max_rel_err, net.checked);
    println!("{}", if report.passed() && net.passed() { "PASS" } else { "FAIL" });

    // A deliberately wrong gradient must be caught.
    let broken = run_suite(&SuiteConfig {
        trials: 5,
        corrupt: true,
        ..SuiteConfig::default()
    })?;
    println!("corrupted run detected: {}", broken.first_failure.is_some());
    Ok(())
}
