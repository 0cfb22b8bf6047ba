//! Acceptance gate: prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;
mod criteria;

fn main() {
    let mut failed = 0;
    for (name, check) in criteria::ALL {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(reason)) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", criteria::ALL.len() - failed, criteria::ALL.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
