//! Use the command verbs as library calls: run two scenarios, compare them,
//! and query lineage from the written co-versioning log.

use std::path::PathBuf;

use fedsim::cli;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenarios = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let work = tempfile::tempdir()?;
    let mut dirs = Vec::new();
    for name in ["uncompressed", "compressed", "gossip"] {
        let out = work.path().join(name);
        cli::cmd_run(&scenarios.join(format!("{name}.json")), None, &out)?;
        dirs.push(out);
    }
    print!("{}", cli::cmd_compare(&dirs)?.render_table());
    println!("\nlineage of version 1 in the compressed run:");
    print!("{}", cli::render_lineage(&cli::cmd_lineage(&dirs[1], 1)?));
    Ok(())
}
