//! Runs the built-in numerical self-checks and prints each result.

use fgvc_ssl::verify::{run, Suite};

fn main() -> fgvc_ssl::Result<()> {
    let checks = run(Suite::All)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{failed} of {} checks failed", checks.len());
    Ok(())
}
