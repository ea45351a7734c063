// Running a pipeline from a TOML experiment config, as the command-line tool does.

use carleman::cli::{parse_config, run_pipeline, Command};

const CONFIG: &str = r#"
command = "identities"
seed = 1

[grid]
n_t = 512
t_start = -16.0
t_period = 32.0
n_x = 4
x_start = [0.0]
x_period = [1.0]
"#;

/// Returns whether the run passed and its cells table as CSV.
pub fn run_example() -> (bool, String) {
    let cfg = parse_config(CONFIG).unwrap();
    let out = run_pipeline(Command::Identities, &cfg).unwrap();
    let csv = String::from_utf8(out.cells.to_csv().unwrap()).unwrap();
    print!("{csv}");
    println!("verdict {:?}", out.verdict);
    (out.verdict.is_pass(), csv)
}

#[allow(dead_code)]
fn main() {
    run_example();
}
