//! One line per acceptance criterion; exits nonzero if any criterion fails.

use std::process::ExitCode;

use signform::validate::{self, Status, ValidateOptions};

fn main() -> ExitCode {
    // libtest flags such as --nocapture or a name filter are not meaningful here.
    let outcomes = validate::run_battery(&ValidateOptions::default(), |o| println!("{}", o.line()));
    let failed = outcomes.iter().filter(|o| o.status == Status::Fail).count();
    println!("acceptance: {} passed, {failed} failed, {} skipped", outcomes.iter().filter(|o| o.status == Status::Pass).count(), outcomes.iter().filter(|o| o.status == Status::Skip).count());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
