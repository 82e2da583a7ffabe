#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

/// Four synthetic scenes recorded in three cities; the third city is the test set.
pub fn write_corpus(dir: &Path, seeds: &[u64]) -> PathBuf {
    let scenes = [("tone", 300.0, "park"), ("tone", 2000.0, "metro"), ("white-noise", 0.0, "street"), ("chirp", 4000.0, "bus")];
    let mut rows = vec!["id\tsource\tscene_label\tcity_label\tsplit".to_string()];
    let mut n = 0;
    for city in ["lyon", "oslo", "rome"] {
        for (kind, freq, label) in scenes {
            for r in 0..3 {
                n += 1;
                let split = if city == "rome" {
                    "test"
                } else if r == 2 {
                    "val"
                } else {
                    "train"
                };
                rows.push(format!("c{n:03}\tsynth:{kind}:{freq}:1:16000:{n}\t{label}\t{city}\t{split}"));
            }
        }
    }
    fs::write(dir.join("manifest.tsv"), rows.join("\n") + "\n").unwrap();
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let config = format!(
        "seeds = [{}]\n\
         [paths]\nmanifest = \"manifest.tsv\"\n\
         [features]\nkind = \"scalogram\"\nwindow = 0.128\nshift = 0.064\n\
         [features.scale]\nf_high = 8000.0\nf_low = 0.5\nt_max = 0.05\nq = 4\n\
         [classifier]\nhidden = 16\nmax_epochs = 8\n\
         [augmentation]\nmax_iterations = 2\ngan_epochs = 2\nsubset_epochs = 3\n",
        seeds.join(", ")
    );
    let path = dir.join("experiment.toml");
    fs::write(&path, config).unwrap();
    path
}

/// Every regular file below `dir`, relative path to contents, sorted.
pub fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
