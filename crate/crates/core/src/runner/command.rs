use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::{collect_detections, SyntheticObjective, SyntheticTrainer, prepare_run_dir, RunFailure, TrialInputs, TrialRun, Trainer, DETECTIONS_FILE, LOG_FILE};
use crate::error::{Error, Result};
use crate::search::TrialConfig;

/// Placeholders substituted in a command template.
pub const PLACEHOLDERS: [&str; 6] = [
    "{config}",
    "{train_ann}",
    "{images_dir}",
    "{val_ann}",
    "{out_dets}",
    "{workdir}",
];

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(24 * 3600);

/// External trainer invoked once per trial, without a shell.
///
/// The template is split into words with POSIX shell quoting rules; each
/// placeholder inside a word is replaced by an absolute path. `{config}` and
/// `{out_dets}` are mandatory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerCommand {
    pub template: String,
    pub timeout: Duration,
    pub declares_deterministic: bool,
    words: Vec<String>,
}

/// TOML form of a trainer description. Exactly one of `command` and
/// `synthetic` is set:
///
/// ```toml
/// command = "python finetune.py --cfg {config} --train {train_ann} --out {out_dets}"
/// timeout_secs = 3600
/// deterministic = true
/// ```
///
/// or `synthetic = ["lr=0.0002:0.0002", "aug_p=0.6:0.3"]` for the built-in
/// synthetic trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerFile {
    #[serde(default)]
    pub command: Option<String>,
    #[serde(default)]
    pub synthetic: Option<Vec<String>>,
    #[serde(default)]
    pub timeout_secs: Option<f64>,
    #[serde(default)]
    pub deterministic: bool,
}

impl TrainerFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn into_trainer(self) -> Result<Box<dyn Trainer>> {
        match (&self.command, &self.synthetic) {
            (Some(_), None) => Ok(Box::new(TrainerCommand::from_file(&self)?)),
            (None, Some(targets)) => {
                let targets = targets
                    .iter()
                    .map(|t| SyntheticObjective::parse_target(t))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Box::new(SyntheticTrainer {
                    objective: SyntheticObjective::new(targets)?,
                }))
            }
            _ => Err(Error::Config("trainer file needs exactly one of `command` and `synthetic`".into())),
        }
    }
}

/// Read a trainer file and build the trainer it describes.
pub fn load_trainer(path: impl AsRef<Path>) -> Result<Box<dyn Trainer>> {
    TrainerFile::load(path)?.into_trainer()
}

impl TrainerCommand {
    pub fn new(template: &str, timeout: Option<Duration>, declares_deterministic: bool) -> Result<Self> {
        let words = shell_words::split(template)
            .map_err(|e| Error::Config(format!("trainer command: {e}")))?;
        if words.is_empty() {
            return Err(Error::Config("trainer command is empty".into()));
        }
        for needed in ["{config}", "{out_dets}"] {
            if !words.iter().any(|w| w.contains(needed)) {
                return Err(Error::Config(format!("trainer command lacks {needed}")));
            }
        }
        if let Some(t) = timeout {
            if t.is_zero() {
                return Err(Error::Config("trainer timeout must be positive".into()));
            }
        }
        Ok(Self {
            template: template.to_string(),
            timeout: timeout.unwrap_or(DEFAULT_TIMEOUT),
            declares_deterministic,
            words,
        })
    }

    pub fn from_file(f: &TrainerFile) -> Result<Self> {
        let timeout = match f.timeout_secs {
            Some(s) if !(s > 0.0 && s.is_finite()) => {
                return Err(Error::Config(format!("timeout_secs {s} must be positive")))
            }
            Some(s) => Some(Duration::from_secs_f64(s)),
            None => None,
        };
        let command = f
            .command
            .as_deref()
            .ok_or_else(|| Error::Config("trainer file has no command".into()))?;
        Self::new(command, timeout, f.deterministic)
    }

    /// Program and arguments after substitution.
    pub fn argv(&self, config: &Path, inputs: &TrialInputs, out_dets: &Path) -> Vec<String> {
        let subs: [(&str, &Path); 6] = [
            ("{config}", config),
            ("{train_ann}", &inputs.train_ann),
            ("{images_dir}", &inputs.images_dir),
            ("{val_ann}", &inputs.val_ann),
            ("{out_dets}", out_dets),
            ("{workdir}", &inputs.workdir),
        ];
        self.words
            .iter()
            .map(|w| {
                subs.iter()
                    .fold(w.clone(), |acc, (k, v)| acc.replace(k, &v.to_string_lossy()))
            })
            .collect()
    }

    fn execute(&self, argv: &[String], run_dir: &Path) -> std::result::Result<(), RunFailure> {
        let log_path = run_dir.join(LOG_FILE);
        let log = File::create(&log_path).map_err(|e| RunFailure::Spawn(format!("{}: {e}", log_path.display())))?;
        let log_err = log.try_clone().map_err(|e| RunFailure::Spawn(e.to_string()))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .current_dir(run_dir)
            .stdin(Stdio::null())
            .stdout(log)
            .stderr(log_err)
            .spawn()
            .map_err(|e| RunFailure::Spawn(format!("{}: {e}", argv[0])))?;
        let status = match child.wait_timeout(self.timeout) {
            Ok(Some(s)) => s,
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(RunFailure::Timeout(self.timeout));
            }
            Err(e) => {
                let _ = child.kill();
                return Err(RunFailure::Spawn(e.to_string()));
            }
        };
        if status.success() {
            Ok(())
        } else {
            Err(RunFailure::Exit(status.code()))
        }
    }
}

impl Trainer for TrainerCommand {
    fn run(&self, trial: &TrialConfig, inputs: &TrialInputs, run_dir: &Path) -> TrialRun {
        let start = Instant::now();
        let run_dir: PathBuf = super::absolute(run_dir).unwrap_or_else(|_| run_dir.to_path_buf());
        let outcome = match prepare_run_dir(trial, &run_dir) {
            Err(e) => Err(RunFailure::Spawn(e.to_string())),
            Ok(config) => {
                let out = run_dir.join(DETECTIONS_FILE);
                let argv = self.argv(&config, inputs, &out);
                log::debug!("trial {}: {:?}", trial.trial_id, argv);
                self.execute(&argv, &run_dir).and_then(|_| collect_detections(&out))
            }
        };
        TrialRun {
            run_dir,
            outcome,
            wall_time: start.elapsed(),
        }
    }

    fn is_deterministic(&self) -> bool {
        self.declares_deterministic
    }

    fn describe(&self) -> String {
        self.template.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> TrialInputs {
        TrialInputs {
            train_ann: "/w/inputs/train.json".into(),
            val_ann: "/w/inputs/val.json".into(),
            images_dir: "/data/my images".into(),
            workdir: "/w".into(),
        }
    }

    #[test]
    fn substitutes_without_shell() {
        let c = TrainerCommand::new(
            "python train.py --cfg {config} --images '{images_dir}' --out={out_dets} '$HOME; rm'",
            None,
            false,
        )
        .unwrap();
        let argv = c.argv(Path::new("/w/t/config.txt"), &inputs(), Path::new("/w/t/d.json"));
        assert_eq!(
            argv,
            vec![
                "python",
                "train.py",
                "--cfg",
                "/w/t/config.txt",
                "--images",
                "/data/my images",
                "--out=/w/t/d.json",
                "$HOME; rm"
            ]
        );
        assert_eq!(c.timeout, DEFAULT_TIMEOUT);
    }

    #[test]
    fn required_placeholders() {
        assert!(TrainerCommand::new("train {config}", None, false).is_err());
        assert!(TrainerCommand::new("train {out_dets}", None, false).is_err());
        assert!(TrainerCommand::new("", None, false).is_err());
        assert!(TrainerCommand::new("train 'unclosed {config} {out_dets}", None, false).is_err());
    }

    #[test]
    fn trainer_file() {
        let f = TrainerFile::parse("command = \"t {config} {out_dets}\"\ntimeout_secs = 2.5\n").unwrap();
        let c = TrainerCommand::from_file(&f).unwrap();
        assert_eq!(c.timeout, Duration::from_millis(2500));
        assert!(!c.declares_deterministic);
        let s = TrainerFile::parse("synthetic = [\"lr=1:1\"]\n").unwrap().into_trainer().unwrap();
        assert!(s.is_deterministic() && s.describe().starts_with("synthetic"));
        assert!(TrainerFile::parse("deterministic = true\n").unwrap().into_trainer().is_err());
        assert!(TrainerFile::parse("command = \"x\"\nbogus = 1\n").is_err());
    }
}
