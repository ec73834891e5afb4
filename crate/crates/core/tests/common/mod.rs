#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use renewal_core::prompt::ScenarioId;
use renewal_core::synthetic::{half_mask, record_image};

pub const SIZE: u32 = 8;

#[derive(Debug, Clone)]
pub struct FixtureRecord {
    pub id: String,
    pub scenario: ScenarioId,
    pub hw_ratio: f64,
    pub upd: bool,
}

impl FixtureRecord {
    pub fn new(id: &str, scenario: ScenarioId, hw_ratio: f64, upd: bool) -> Self {
        Self { id: id.to_string(), scenario, hw_ratio, upd }
    }
}

fn factor(s: ScenarioId) -> &'static str {
    match s {
        ScenarioId::NI => "Wall",
        ScenarioId::BR => "Building",
        ScenarioId::GSE | ScenarioId::CG => "Vegetation",
    }
}

/// Writes images, masks and `manifest.jsonl` under `dir`.
pub fn write_manifest(dir: &Path, records: &[FixtureRecord]) -> PathBuf {
    fs::create_dir_all(dir.join("img")).unwrap();
    fs::create_dir_all(dir.join("mask")).unwrap();
    let mask = half_mask(SIZE, SIZE).unwrap();
    let mut text = String::new();
    for r in records {
        fs::write(dir.join(format!("img/{}.png", r.id)), record_image(&r.id, SIZE, SIZE).unwrap()).unwrap();
        if r.upd {
            fs::write(dir.join(format!("mask/{}.png", r.id)), &mask).unwrap();
            writeln!(
                text,
                r#"{{"id":"{id}","image":"img/{id}.png","upd_detected":true,"factor":"{f}","mask":"mask/{id}.png","hw_ratio":{a},"scenario":"{s}"}}"#,
                id = r.id,
                f = factor(r.scenario),
                a = r.hw_ratio,
                s = r.scenario
            )
            .unwrap();
        } else {
            writeln!(
                text,
                r#"{{"id":"{id}","image":"img/{id}.png","upd_detected":false,"hw_ratio":{a},"scenario":"{s}"}}"#,
                id = r.id,
                a = r.hw_ratio,
                s = r.scenario
            )
            .unwrap();
        }
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, text).unwrap();
    path
}

/// `n` disorder records cycling through scenarios and morphology buckets.
pub fn mixed_records(n: usize) -> Vec<FixtureRecord> {
    let ratios = [0.3, 1.0, 2.0, 0.5, 1.5, 0.1];
    (0..n)
        .map(|i| FixtureRecord::new(&format!("rec{i:03}"), ScenarioId::ALL[i % 4], ratios[i % ratios.len()], true))
        .collect()
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
