//! Train the two-branch recovery problem at one noise level and print the
//! fit report.
//!
//! `cargo run --release --example table1_row -- 0.1 [iterations]`

use drpinn::StaticExperiment;

fn main() -> drpinn::Result<()> {
    let mut args = std::env::args().skip(1);
    let sigma = args.next().map_or(0.0, |s| s.parse().expect("sigma"));
    let mut exp = StaticExperiment::table1(sigma);
    if let Some(n) = args.next() {
        exp.train.iterations = n.parse().expect("iterations");
    }
    let run = exp.run()?;
    print!("{}", run.report.to_text());
    eprintln!("elapsed {:.1?}", run.elapsed);
    Ok(())
}
