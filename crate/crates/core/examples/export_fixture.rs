//! Writes a simulated dataset and its manifest:
//! `cargo run --example export_fixture -- <dir> <stem> <n> [replicate]`.

use qfunc::simulation::{export_fixture, Design, ErrorDist, SimulationConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 3 {
        eprintln!("usage: export_fixture <dir> <stem> <n> [replicate]");
        std::process::exit(2);
    }
    let n: usize = args[2].parse().expect("n must be an integer");
    let replicate: usize = args.get(3).map(|r| r.parse().expect("replicate must be an integer")).unwrap_or(0);
    let config = SimulationConfig {
        n_grid: vec![n],
        p: 2,
        beta0: 1.0,
        beta: vec![2.0, -1.0],
        error_dist: ErrorDist::ShiftedExponential { rate: 1.0 },
        design: Design::IidUniformCube,
        ..Default::default()
    };
    match export_fixture(&config, n, replicate, std::path::Path::new(&args[0]), &args[1]) {
        Ok(m) => println!("wrote {} (seed {}, n {})", m.file, m.seed, m.n),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            std::process::exit(1);
        }
    }
}
