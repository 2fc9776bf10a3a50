//! Command-line front end: corpus generation, training, threshold sweeps,
//! evaluation, and report rendering over one flat configuration schema.
//!
//! An invocation is `amps <command> [--config FILE] [--section.key=value ...]
//! [args]`. Values merge as defaults < config file < flags (left to right),
//! and every command echoes the fully resolved configuration into the output
//! directory before doing any work.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::Path;

use amps_core::error::{AmpsError, Result};

use config::{resolve_paths, Settings, OUT_ROOT_ENV, SCHEMA};

pub const USAGE: &str = "\
usage: amps <command> [--config FILE] [--section.key=value ...] [args]

commands:
  gen                     generate a synthetic corpus into out.dir
  train                   train a model on the generated corpus
  sweep                   train one gated model per threshold, pick by validation WER
  eval A.amps [B.amps]    score one checkpoint, or compare two systems
  report FILE.json        render a saved report, comparison, or sweep table
  help                    show this text and every configuration key

flags may also be written `--section.key value`; `--mode` and `--tau`
abbreviate `--train.mode` and `--train.tau`.

exit codes: 0 ok, 2 usage or configuration error, 3 missing or malformed
data, 4 runtime failure.

environment: AMPS_OUT_ROOT supplies the default out.dir.";

/// Runs one invocation and maps the outcome to a process exit code.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

/// 2 for configuration problems, 3 for data problems, 4 for everything else.
pub fn exit_code_for(e: &AmpsError) -> i32 {
    match e {
        AmpsError::Config(_) => 2,
        AmpsError::Data(_) | AmpsError::Io(_) => 3,
        _ => 4,
    }
}

fn dispatch<I: IntoIterator<Item = String>>(args: I) -> Result<()> {
    let args: Vec<String> = args.into_iter().collect();
    let Some(command) = args.first().map(String::as_str) else {
        return Err(AmpsError::config(format!("missing command\n{USAGE}")));
    };
    if matches!(command, "help" | "--help" | "-h") {
        println!("{USAGE}\n\nconfiguration keys (defaults in brackets):");
        for (key, default, help) in SCHEMA {
            let shown = if default.is_empty() { "\"\"" } else { default };
            println!("  {key:<28} {help} [{shown}]");
        }
        return Ok(());
    }

    let (settings, positionals) = parse_invocation(&args[1..])?;
    let env_root = std::env::var(OUT_ROOT_ENV).ok();
    let paths = resolve_paths(&settings, env_root.as_deref());

    match command {
        "gen" => {
            no_positionals("gen", &positionals)?;
            commands::cmd_gen(&settings, &paths)
        }
        "train" => {
            no_positionals("train", &positionals)?;
            commands::cmd_train(&settings, &paths)
        }
        "sweep" => {
            no_positionals("sweep", &positionals)?;
            commands::cmd_sweep(&settings, &paths)
        }
        "eval" => commands::cmd_eval(&settings, &paths, &positionals),
        "report" => {
            if positionals.len() != 1 {
                return Err(AmpsError::config("report takes exactly one JSON artifact path"));
            }
            commands::cmd_report(&settings, Path::new(&positionals[0]))
        }
        other => Err(AmpsError::config(format!("unknown command `{other}`\n{USAGE}"))),
    }
}

fn no_positionals(command: &str, positionals: &[String]) -> Result<()> {
    if positionals.is_empty() {
        Ok(())
    } else {
        Err(AmpsError::config(format!(
            "{command} takes no positional arguments, got `{}`",
            positionals.join(" ")
        )))
    }
}

/// Splits arguments into settings and positionals. The config file (if any)
/// applies first; flags then apply left to right, so later flags win.
fn parse_invocation(args: &[String]) -> Result<(Settings, Vec<String>)> {
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut positionals = Vec::new();
    let mut config_path: Option<String> = None;

    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        if let Some(body) = arg.strip_prefix("--") {
            let (key, value) = match body.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    i += 1;
                    let v = args.get(i).ok_or_else(|| {
                        AmpsError::config(format!("flag --{body} needs a value"))
                    })?;
                    (body.to_string(), v.clone())
                }
            };
            if key == "config" {
                if config_path.replace(value).is_some() {
                    return Err(AmpsError::config("--config given more than once"));
                }
            } else {
                flags.push((key, value));
            }
        } else {
            positionals.push(arg.clone());
        }
        i += 1;
    }

    let mut settings = Settings::default();
    if let Some(p) = &config_path {
        settings.apply_file(Path::new(p))?;
    }
    for (key, value) in flags {
        settings.apply_flag(&key, &value)?;
    }
    Ok((settings, positionals))
}

// ─────────────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(args: &[&str]) -> Vec<String> {
        args.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn flags_merge_left_to_right_and_split_from_positionals() {
        let (s, pos) = parse_invocation(&strings(&[
            "--train.epochs=3",
            "a.amps",
            "--train.epochs",
            "5",
            "b.amps",
            "--tau=2.5",
        ]))
        .unwrap();
        assert_eq!(s.str_("train.epochs"), "5");
        assert_eq!(s.str_("train.tau"), "2.5");
        assert_eq!(pos, vec!["a.amps".to_string(), "b.amps".to_string()]);
    }

    #[test]
    fn malformed_invocations_are_config_errors() {
        assert!(matches!(
            parse_invocation(&strings(&["--train.epochs"])).unwrap_err(),
            AmpsError::Config(_)
        ));
        assert!(matches!(
            parse_invocation(&strings(&["--no.such.key=1"])).unwrap_err(),
            AmpsError::Config(_)
        ));
        assert!(matches!(
            parse_invocation(&strings(&["--config=a", "--config=b"])).unwrap_err(),
            AmpsError::Config(_)
        ));
    }

    #[test]
    fn exit_codes_partition_the_error_space() {
        assert_eq!(exit_code_for(&AmpsError::config("x")), 2);
        assert_eq!(exit_code_for(&AmpsError::data("x")), 3);
        assert_eq!(
            exit_code_for(&AmpsError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "x"
            ))),
            3
        );
        assert_eq!(exit_code_for(&AmpsError::runtime("x")), 4);
        assert_eq!(
            exit_code_for(&AmpsError::EmptyInput { op: "t", what: "w" }),
            4
        );
    }
}
