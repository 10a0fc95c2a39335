//! Writes every shipped model description as JSON into a directory
//! (default `models`).

use std::path::PathBuf;
use std::process::ExitCode;

fn main() -> ExitCode {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "models".into()));
    let run = || -> Result<usize, Box<dyn std::error::Error>> {
        std::fs::create_dir_all(&dir)?;
        let all = systolic::zoo::all_descriptions()?;
        for (name, desc) in &all {
            let text = serde_json::to_string_pretty(desc)?;
            std::fs::write(dir.join(format!("{name}.json")), text + "\n")?;
        }
        Ok(all.len())
    };
    match run() {
        Ok(n) => {
            eprintln!("wrote {n} models to {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gen-models: {e}");
            ExitCode::FAILURE
        }
    }
}
