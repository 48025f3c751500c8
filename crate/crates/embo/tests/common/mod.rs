#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use embo::fixture::{self, SIX_STORY_CONFIG};

/// Writes the six-story fixture into `dir` after applying `edit` to its
/// TOML; returns the config path.
pub fn fixture_with(dir: &Path, edit: impl FnOnce(&mut toml::Table)) -> PathBuf {
    let path = fixture::write_six_story(dir).unwrap();
    let mut table: toml::Table = SIX_STORY_CONFIG.parse().unwrap();
    edit(&mut table);
    std::fs::write(&path, toml::to_string(&table).unwrap()).unwrap();
    path
}

pub fn table<'a>(t: &'a mut toml::Table, key: &str) -> &'a mut toml::Table {
    t.entry(key.to_string())
        .or_insert_with(|| toml::Value::Table(Default::default()))
        .as_table_mut()
        .unwrap()
}

/// Cheaper gain search for tests that only care about plumbing.
pub fn fast_gain(t: &mut toml::Table) {
    let gain = table(t, "gain");
    table(gain, "optimizer").insert("starts".into(), 1.into());
    let grid = table(gain, "grid");
    grid.insert("log_points".into(), 256.into());
    grid.insert("peak_points".into(), 16.into());
}

pub fn embo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embo")).args(args).output().unwrap()
}

pub fn run(verb: &str, config: &Path, out: &Path) -> Output {
    embo(&[verb, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every output file except the run manifests, which carry timings.
pub fn data_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".manifest.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}
