use std::path::{Path, PathBuf};

use dosebo::sim::{run_study, ReplicateOptions, StudyConfig, StudyOutput, StudyRunSpec};

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub config: Option<PathBuf>,
    pub scenarios: Vec<String>,
    pub designs: Vec<String>,
    pub replicates: usize,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
    pub allow_partial: bool,
}

pub fn load_config(path: Option<&Path>) -> Result<StudyConfig, String> {
    match path {
        None => Ok(StudyConfig::builtin()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            StudyConfig::from_toml(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

/// Runs the study and writes its outputs. Replicate failures are an error
/// unless `allow_partial` is set; the outputs are written either way.
pub fn simulate(args: &SimulateArgs) -> Result<StudyOutput, String> {
    let config = load_config(args.config.as_deref())?;
    let spec = StudyRunSpec {
        scenarios: args.scenarios.clone(),
        designs: args.designs.clone(),
        replicates: args.replicates,
        master_seed: args.seed,
        threads: args.threads,
        options: ReplicateOptions::default(),
    };
    let out = run_study(&config, &spec).map_err(|e| e.to_string())?;
    out.write(&args.out).map_err(|e| e.to_string())?;
    let failed = out.failure_count();
    if failed > 0 && !args.allow_partial {
        return Err(format!(
            "{failed} replicate(s) failed; see {} (use --allow-partial to accept)",
            args.out.join("manifest.json").display()
        ));
    }
    Ok(out)
}
