//! Runs the ten acceptance criteria and prints one line per criterion.
//! `HYPERBOLIC_CRITERIA=3,8` restricts the run.

use hyperbolic_core::verify::{run_criterion, Suite};

fn main() {
    let suite = Suite::default();
    let ids: Vec<usize> = match std::env::var("HYPERBOLIC_CRITERIA") {
        Ok(list) => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => (1..=10).collect(),
    };
    let mut failed = 0;
    for id in ids {
        let Some(c) = run_criterion(&suite, id) else {
            eprintln!("unknown criterion {id}");
            std::process::exit(2);
        };
        println!("{}", c.line());
        if !c.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
