use std::fmt::Write;

use crate::error::Result;
use crate::oracle::{
    check_identity, check_inequality, identity_suite, inequality_suite, leave_one_out_hand_case, random_suite, Identity,
    Inequality, OracleReport, OracleSetup, SUITE_SEED,
};

/// Setups with one and two rounds in the default suite.
pub const SUITE_R1: usize = 12;
pub const SUITE_R2: usize = 12;

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub text: String,
    pub checks: usize,
    pub failures: usize,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn line(out: &mut String, label: &str, r: &OracleReport) -> bool {
    let ok = r.passes();
    let _ = writeln!(
        out,
        "{} {label:<40} lhs={:+.17e} rhs={:+.17e} slack={:+.3e} worst={:+.3e}",
        if ok { "PASS" } else { "FAIL" },
        r.lhs,
        r.rhs,
        r.slack,
        r.worst()
    );
    ok
}

/// Runs the hand cases and the randomized identity and inequality suites.
///
/// A nonzero `aggregation_skew` scales every aggregate by `1 + aggregation_skew`.
pub fn run_verify(aggregation_skew: f64) -> Result<VerifyReport> {
    let mut text = String::new();
    let (mut checks, mut failures) = (0, 0);
    let mut tally = |ok: bool| {
        checks += 1;
        if !ok {
            failures += 1;
        }
    };
    let perturb = |mut s: OracleSetup| {
        s.aggregation_skew = aggregation_skew;
        s
    };

    let _ = writeln!(text, "== hand cases");
    tally(line(&mut text, "leave_one_out (single sample)", &leave_one_out_hand_case()));
    let tiny = perturb(OracleSetup::tiny());
    tally(line(&mut text, "corollary_one_shot (tiny)", &check_identity(Identity::CorollaryOneShot, &tiny)?));
    tally(line(&mut text, "theorem (tiny)", &check_inequality(Inequality::Theorem, &tiny)?));

    let setups: Vec<OracleSetup> = random_suite(SUITE_SEED, SUITE_R1, SUITE_R2).into_iter().map(perturb).collect();
    let _ = writeln!(text, "== identity suite ({} setups, seed {SUITE_SEED})", setups.len());
    for (idx, r) in identity_suite(&setups)? {
        tally(line(&mut text, &format!("{} [setup {idx}, R={}]", r.check, setups[idx].rounds()), &r));
    }
    let _ = writeln!(text, "== inequality suite");
    for (idx, r) in inequality_suite(&setups)? {
        tally(line(&mut text, &format!("{} [setup {idx}, R={}]", r.check, setups[idx].rounds()), &r));
    }
    let _ = writeln!(text, "== {checks} checks, {failures} failed");
    Ok(VerifyReport { text, checks, failures })
}
