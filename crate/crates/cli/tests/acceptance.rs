//! Full acceptance suite; prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use reflexgrasp::kinematics::RobotModel;
use reflexgrasp_cli::accept::{run_acceptance, AcceptOptions};

fn main() {
    let dir = tempfile::tempdir().expect("scratch directory");
    let opts = AcceptOptions {
        out: dir.path().to_path_buf(),
        filter: None,
    };
    let report = match run_acceptance(&opts, &RobotModel::builtin()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("acceptance could not run: {e}");
            std::process::exit(1);
        }
    };
    for c in &report.criteria {
        println!("{}", c.line());
    }
    let failed = report.criteria.iter().filter(|c| !c.passed).count();
    if report.criteria.len() != 8 || failed > 0 {
        eprintln!("{failed} of {} criteria failed", report.criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", report.criteria.len());
}
