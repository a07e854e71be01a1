use std::collections::BTreeSet;
use std::path::PathBuf;

use pedilung::TaskId;
use pedilung_cli::args::command_keys;
use pedilung_cli::config::{RunConfig, DATASET_KEYS, DSP_KEYS, EVAL_KEYS, MODEL_KEYS, SCALOGRAM_KEYS, TRAIN_KEYS};

fn dotted(value: &toml::Value, prefix: &str, out: &mut BTreeSet<String>) {
    match value {
        toml::Value::Table(t) if prefix.is_empty() => {
            for (k, v) in t {
                dotted(v, k, out);
            }
        }
        toml::Value::Table(t) => {
            for k in t.keys() {
                out.insert(format!("{prefix}.{k}"));
            }
        }
        _ => {
            out.insert(prefix.to_string());
        }
    }
}

/// A config with every optional field populated, so serialization shows every key.
fn populated() -> RunConfig {
    let mut c = RunConfig::default();
    c.dataset.root = Some(PathBuf::from("corpus"));
    c.dataset.manifest = Some(PathBuf::from("train.manifest"));
    c.scalogram.colormap = Some(PathBuf::from("jet.txt"));
    c.train.gamma = Some(2.0);
    c.train.checkpoint_dir = Some(PathBuf::from("ckpt"));
    c.train.early_stopping_patience = Some(5);
    c.eval.task = Some(TaskId::Task2_1);
    c.eval.gamma = Some(5.0);
    c
}

#[test]
fn key_lists_match_the_serialized_document() {
    let doc: toml::Value = toml::from_str(&populated().to_toml()).unwrap();
    let mut got = BTreeSet::new();
    dotted(&doc, "", &mut got);
    let listed: BTreeSet<String> = [DATASET_KEYS, DSP_KEYS, SCALOGRAM_KEYS, MODEL_KEYS, TRAIN_KEYS, EVAL_KEYS]
        .iter()
        .flat_map(|k| k.iter().map(|s| s.to_string()))
        .collect();
    assert_eq!(got, listed);
}

#[test]
fn round_trip_through_toml() {
    let c = populated();
    assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
}

#[test]
fn empty_document_gives_defaults() {
    let c = RunConfig::parse("").unwrap();
    assert_eq!(c, RunConfig::default());
    assert_eq!(c.train.batch_size, 128);
    assert_eq!(c.train.task, TaskId::Task1_2);
    assert_eq!(c.scalogram.height, 224);
    assert_eq!(c.model.embed_dim, 1280);
}

#[test]
fn flattened_sections_accept_their_keys() {
    let c = RunConfig::parse(
        "[dsp]\nevent_length_s = 1.5\nlow_hz = 60.0\n[scalogram]\ngamma_sym = 3.0\ntime_bandwidth = 30.0\nheight = 64\n",
    )
    .unwrap();
    assert_eq!(c.dsp.policy.event_length_s, 1.5);
    assert_eq!(c.dsp.low_hz, 60.0);
    assert_eq!(c.scalogram.morse.time_bandwidth, 30.0);
    assert_eq!(c.scalogram.height, 64);
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    for (doc, key) in [
        ("bogus = 1", "bogus"),
        ("[dataset]\nroots = \"x\"", "roots"),
        ("[dsp]\nlow = 50.0", "low"),
        ("[scalogram]\nbeta = 3.0", "beta"),
        ("[model]\nlayers = 3", "layers"),
        ("[train]\nepoch = 3", "epoch"),
        ("[eval]\nscore = 1.0", "score"),
    ] {
        let err = RunConfig::parse(doc).unwrap_err().to_string();
        assert!(err.contains(key), "{doc:?}: {err}");
    }
}

#[test]
fn task_and_gamma_precedence() {
    let mut c = RunConfig::default();
    c.train.task = TaskId::Task2_2;
    assert_eq!(c.task(None), TaskId::Task2_2);
    c.eval.task = Some(TaskId::Task2_1);
    assert_eq!(c.task(None), TaskId::Task2_1);
    assert_eq!(c.task(Some(TaskId::Task1_1)), TaskId::Task1_1);
    assert_eq!(c.gamma(None), None);
    c.train.gamma = Some(1.0);
    c.eval.gamma = Some(2.0);
    assert_eq!(c.gamma(None), Some(2.0));
    assert_eq!(c.gamma(Some(3.0)), Some(3.0));
}

#[test]
fn every_subcommand_help_lists_its_keys() {
    let mut cmd = pedilung_cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|c| c.get_name().to_string()).collect();
    assert_eq!(names.len(), 10);
    for name in names {
        let help = cmd.find_subcommand_mut(&name).unwrap().render_long_help().to_string();
        let keys = command_keys(&name);
        assert!(!keys.is_empty(), "{name} reads no keys");
        for key in keys.iter().flat_map(|k| k.iter()) {
            assert!(help.contains(key), "{name} --help omits {key}");
        }
    }
}

#[test]
fn training_commands_read_every_train_key() {
    for name in ["train", "sweep"] {
        let keys: BTreeSet<&str> = command_keys(name).into_iter().flatten().copied().collect();
        for k in TRAIN_KEYS.iter().chain(MODEL_KEYS) {
            assert!(keys.contains(k), "{name} misses {k}");
        }
    }
}
